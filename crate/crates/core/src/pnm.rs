//! Netpbm image I/O: PGM (P2/P5) and PPM (P3/P6).

use std::path::Path;

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct GrayImage {
    pub width: usize,
    pub height: usize,
    /// Row-major intensities.
    pub data: Vec<f64>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::DimensionMismatch(format!(
                "{} pixels for a {width}x{height} image",
                data.len()
            )));
        }
        Ok(GrayImage { width, height, data })
    }

    pub fn at(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.width + col]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RgbImage {
    pub width: usize,
    pub height: usize,
    pub data: Vec<[f64; 3]>,
}

impl RgbImage {
    pub fn new(width: usize, height: usize, data: Vec<[f64; 3]>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::DimensionMismatch(format!(
                "{} pixels for a {width}x{height} image",
                data.len()
            )));
        }
        Ok(RgbImage { width, height, data })
    }

    pub fn at(&self, row: usize, col: usize) -> [f64; 3] {
        self.data[row * self.width + col]
    }
}

struct Header {
    magic: [u8; 2],
    width: usize,
    height: usize,
    maxval: u32,
    data_start: usize,
}

fn parse_header(bytes: &[u8]) -> Result<Header> {
    let mut pos = 0;
    let mut tokens: Vec<String> = Vec::with_capacity(4);
    while tokens.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if pos < bytes.len() && bytes[pos] == b'#' {
            while pos < bytes.len() && bytes[pos] != b'\n' {
                pos += 1;
            }
            continue;
        }
        if pos >= bytes.len() {
            return Err(Error::Parse {
                line: 1,
                msg: "truncated netpbm header".into(),
            });
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() && bytes[pos] != b'#' {
            pos += 1;
        }
        tokens.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
    }
    let magic = tokens[0].as_bytes();
    if magic.len() != 2 || magic[0] != b'P' {
        return Err(Error::Parse {
            line: 1,
            msg: format!("bad magic {:?}", tokens[0]),
        });
    }
    let num = |s: &str, what: &str| -> Result<usize> {
        s.parse::<usize>().map_err(|_| Error::Parse {
            line: 1,
            msg: format!("bad {what} {s:?}"),
        })
    };
    let width = num(&tokens[1], "width")?;
    let height = num(&tokens[2], "height")?;
    let maxval = num(&tokens[3], "maxval")?;
    if maxval == 0 || maxval > 65535 {
        return Err(Error::Parse {
            line: 1,
            msg: format!("maxval {maxval} out of range"),
        });
    }
    // exactly one whitespace byte separates the header from binary data
    Ok(Header {
        magic: [magic[0], magic[1]],
        width,
        height,
        maxval: maxval as u32,
        data_start: pos + 1,
    })
}

fn read_samples(bytes: &[u8], h: &Header, count: usize, ascii: bool) -> Result<Vec<f64>> {
    if ascii {
        let text = String::from_utf8_lossy(bytes.get(h.data_start.min(bytes.len())..).unwrap_or(&[]));
        let mut out = Vec::with_capacity(count);
        for line in text.lines() {
            let line = line.split('#').next().unwrap_or("");
            for tok in line.split_whitespace() {
                let v: u32 = tok.parse().map_err(|_| Error::Parse {
                    line: 0,
                    msg: format!("bad sample {tok:?}"),
                })?;
                if v > h.maxval {
                    return Err(Error::Parse {
                        line: 0,
                        msg: format!("sample {v} above maxval"),
                    });
                }
                out.push(v as f64);
            }
        }
        if out.len() < count {
            return Err(Error::Parse {
                line: 0,
                msg: format!("expected {count} samples, found {}", out.len()),
            });
        }
        out.truncate(count);
        Ok(out)
    } else {
        let wide = h.maxval > 255;
        let need = count * if wide { 2 } else { 1 };
        let data = bytes.get(h.data_start..h.data_start + need).ok_or_else(|| Error::Parse {
            line: 0,
            msg: "truncated binary raster".into(),
        })?;
        Ok(if wide {
            data.chunks(2).map(|c| ((c[0] as u32) << 8 | c[1] as u32) as f64).collect()
        } else {
            data.iter().map(|&b| b as f64).collect()
        })
    }
}

pub fn parse_pgm(bytes: &[u8]) -> Result<GrayImage> {
    let h = parse_header(bytes)?;
    let ascii = match h.magic[1] {
        b'2' => true,
        b'5' => false,
        _ => {
            return Err(Error::Parse {
                line: 1,
                msg: "not a PGM file".into(),
            })
        }
    };
    let data = read_samples(bytes, &h, h.width * h.height, ascii)?;
    GrayImage::new(h.width, h.height, data)
}

pub fn parse_ppm(bytes: &[u8]) -> Result<RgbImage> {
    let h = parse_header(bytes)?;
    let ascii = match h.magic[1] {
        b'3' => true,
        b'6' => false,
        _ => {
            return Err(Error::Parse {
                line: 1,
                msg: "not a PPM file".into(),
            })
        }
    };
    let flat = read_samples(bytes, &h, 3 * h.width * h.height, ascii)?;
    let data = flat.chunks(3).map(|c| [c[0], c[1], c[2]]).collect();
    RgbImage::new(h.width, h.height, data)
}

pub fn read_pgm(path: impl AsRef<Path>) -> Result<GrayImage> {
    parse_pgm(&std::fs::read(path)?)
}

pub fn read_ppm(path: impl AsRef<Path>) -> Result<RgbImage> {
    parse_ppm(&std::fs::read(path)?)
}

/// ASCII PGM with maxval 255; intensities are rounded and clamped.
pub fn format_pgm(img: &GrayImage) -> String {
    let mut s = format!("P2\n{} {}\n255\n", img.width, img.height);
    for r in 0..img.height {
        let row: Vec<String> = (0..img.width)
            .map(|c| (img.at(r, c).round().clamp(0.0, 255.0) as u32).to_string())
            .collect();
        s.push_str(&row.join(" "));
        s.push('\n');
    }
    s
}

/// ASCII PPM (P3) with maxval 255.
pub fn format_ppm(width: usize, height: usize, pixels: &[[u8; 3]]) -> String {
    let mut s = format!("P3\n{width} {height}\n255\n");
    for r in 0..height {
        let row: Vec<String> = (0..width)
            .map(|c| {
                let p = pixels[r * width + c];
                format!("{} {} {}", p[0], p[1], p[2])
            })
            .collect();
        s.push_str(&row.join(" "));
        s.push('\n');
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ascii_pgm_with_comments() {
        let img = parse_pgm(b"P2\n# made by hand\n3 2\n255\n0 1 2\n# mid\n3 4 255\n").unwrap();
        assert_eq!(img.width, 3);
        assert_eq!(img.data, vec![0.0, 1.0, 2.0, 3.0, 4.0, 255.0]);
    }

    #[test]
    fn binary_pgm_and_ppm() {
        let mut bytes = b"P5 2 2 255\n".to_vec();
        bytes.extend([10u8, 20, 30, 40]);
        assert_eq!(parse_pgm(&bytes).unwrap().data, vec![10.0, 20.0, 30.0, 40.0]);

        let mut bytes = b"P6\n1 1\n65535\n".to_vec();
        bytes.extend([1u8, 0, 0, 2, 255, 255]);
        assert_eq!(parse_ppm(&bytes).unwrap().data, vec![[256.0, 2.0, 65535.0]]);
    }

    #[test]
    fn rejects_bad_files() {
        assert!(parse_pgm(b"P3 1 1 255 0 0 0").is_err());
        assert!(parse_pgm(b"P5 2 2 255\n\x01").is_err());
        assert!(parse_pgm(b"P2 2 1 10 3 11").is_err());
        assert!(parse_ppm(b"P3 1").is_err());
    }

    #[test]
    fn pgm_round_trip() {
        let img = GrayImage::new(2, 2, vec![0.0, 128.0, 255.0, 7.0]).unwrap();
        assert_eq!(parse_pgm(format_pgm(&img).as_bytes()).unwrap(), img);
    }
}
