//! On-disk formats: PNG images, plain-text kernels and motion fields,
//! key=value sidecars.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use deconv_core::nonuniform::MotionField;
use deconv_core::{Image, Kernel};
use image::{DynamicImage, GrayImage, RgbImage};

use crate::error::{CliError, CliResult};

/// Loads a PNG as a 1-channel (gray) or 3-channel image in [0, 1].
pub fn read_png(path: &Path) -> CliResult<Image> {
    let img = image::open(path).map_err(|e| CliError::io(path, e))?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let gray = matches!(
        img,
        DynamicImage::ImageLuma8(_)
            | DynamicImage::ImageLumaA8(_)
            | DynamicImage::ImageLuma16(_)
            | DynamicImage::ImageLumaA16(_)
    );
    let parsed = if gray {
        let g = img.to_luma16();
        Image::new(h, w, 1, g.into_raw().into_iter().map(|v| v as f64 / 65535.0).collect())
    } else {
        let rgb = img.to_rgb16();
        let raw = rgb.into_raw();
        let mut data = vec![0.0; 3 * h * w];
        for (p, px) in raw.chunks_exact(3).enumerate() {
            for c in 0..3 {
                data[c * h * w + p] = px[c] as f64 / 65535.0;
            }
        }
        Image::new(h, w, 3, data)
    };
    parsed.map_err(|e| CliError::io(path, e))
}

fn quantize(v: f64) -> u8 {
    (255.0 * v.clamp(0.0, 1.0)).round() as u8
}

/// Writes an 8-bit PNG, clamping to [0, 1].
pub fn write_png(path: &Path, img: &Image) -> CliResult<()> {
    make_parent(path)?;
    let (h, w) = (img.height() as u32, img.width() as u32);
    let result = match img.channels() {
        1 => GrayImage::from_raw(w, h, img.data().iter().map(|&v| quantize(v)).collect())
            .expect("buffer matches size")
            .save(path),
        3 => {
            let n = img.pixels();
            let mut buf = Vec::with_capacity(3 * n);
            for p in 0..n {
                for c in 0..3 {
                    buf.push(quantize(img.channel(c)[p]));
                }
            }
            RgbImage::from_raw(w, h, buf).expect("buffer matches size").save(path)
        }
        c => return Err(CliError::Config(format!("cannot write a {c}-channel image as PNG"))),
    };
    result.map_err(|e| CliError::io(path, e))
}

fn read_text(path: &Path) -> CliResult<String> {
    fs::read_to_string(path).map_err(|e| CliError::io(path, e))
}

fn make_parent(path: &Path) -> CliResult<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    Ok(())
}

pub fn write_text(path: &Path, text: &str) -> CliResult<()> {
    make_parent(path)?;
    fs::write(path, text).map_err(|e| CliError::io(path, e))
}

/// Kernel text: a `height width` line followed by `height` rows of
/// whitespace-separated taps. `#` starts a comment.
pub fn parse_kernel(text: &str) -> Result<Kernel, String> {
    let mut lines = text.lines().map(|l| l.split('#').next().unwrap_or("").trim()).filter(|l| !l.is_empty());
    let header = lines.next().ok_or("empty kernel file")?;
    let dims: Vec<usize> = header
        .split_whitespace()
        .map(|t| t.parse().map_err(|_| format!("bad kernel size '{t}'")))
        .collect::<Result<_, _>>()?;
    let [h, w] = dims[..] else {
        return Err(format!("kernel header must be 'height width', got '{header}'"));
    };
    let mut taps = Vec::with_capacity(h * w);
    for (r, line) in lines.enumerate() {
        let row: Vec<f64> = line
            .split_whitespace()
            .map(|t| t.parse().map_err(|_| format!("bad tap '{t}' in row {}", r + 1)))
            .collect::<Result<_, _>>()?;
        if row.len() != w {
            return Err(format!("row {} has {} taps, expected {w}", r + 1, row.len()));
        }
        taps.extend(row);
    }
    if taps.len() != h * w {
        return Err(format!("expected {h} rows, got {}", taps.len() / w.max(1)));
    }
    Kernel::new(h, w, taps).map_err(|e| e.to_string())
}

pub fn format_kernel(k: &Kernel) -> String {
    let mut s = format!("{} {}\n", k.height(), k.width());
    for row in k.taps().chunks(k.width()) {
        let cells: Vec<String> = row.iter().map(|v| format!("{v:e}")).collect();
        s.push_str(&cells.join(" "));
        s.push('\n');
    }
    s
}

pub fn read_kernel(path: &Path) -> CliResult<Kernel> {
    parse_kernel(&read_text(path)?).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

pub fn write_kernel(path: &Path, k: &Kernel) -> CliResult<()> {
    write_text(path, &format_kernel(k))
}

/// Motion field CSV: one row per image row, dictionary indices separated
/// by commas.
pub fn parse_field(text: &str) -> Result<MotionField, String> {
    let mut index = Vec::new();
    let mut width = None;
    let mut height = 0;
    for line in text.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#')) {
        let row: Vec<usize> = line
            .split(',')
            .map(|t| t.trim().parse().map_err(|_| format!("bad index '{t}' in row {}", height + 1)))
            .collect::<Result<_, _>>()?;
        if *width.get_or_insert(row.len()) != row.len() {
            return Err(format!("row {} has {} entries", height + 1, row.len()));
        }
        index.extend(row);
        height += 1;
    }
    MotionField::new(height, width.unwrap_or(0), index).map_err(|e| e.to_string())
}

pub fn format_field(field: &MotionField) -> String {
    let mut s = String::new();
    for row in field.indices().chunks(field.width()) {
        let cells: Vec<String> = row.iter().map(usize::to_string).collect();
        let _ = writeln!(s, "{}", cells.join(","));
    }
    s
}

pub fn read_field(path: &Path) -> CliResult<MotionField> {
    parse_field(&read_text(path)?).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

/// `key=value` lines; blank lines and `#` comments are skipped.
pub fn parse_pairs(text: &str) -> Result<Vec<(String, String)>, String> {
    let mut out = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or(format!("line {}: expected key=value", n + 1))?;
        out.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}

pub fn format_pairs(pairs: &[(&str, String)]) -> String {
    pairs.iter().map(|(k, v)| format!("{k}={v}\n")).collect()
}

pub fn read_pairs(path: &Path) -> CliResult<Vec<(String, String)>> {
    parse_pairs(&read_text(path)?).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kernel_text_round_trip() {
        let k = Kernel::gaussian(5, 1.3).unwrap();
        let back = parse_kernel(&format_kernel(&k)).unwrap();
        assert_eq!(k, back);
    }

    #[test]
    fn kernel_text_errors() {
        assert!(parse_kernel("").is_err());
        assert!(parse_kernel("2 2\n1 0\n0 0\n").is_err());
        assert!(parse_kernel("3 3\n0 0 0\n0 1\n0 0 0\n").is_err());
        assert!(parse_kernel("1 1\nx\n").is_err());
        assert!(parse_kernel("# delta\n1 1\n1 # center\n").is_ok());
    }

    #[test]
    fn field_round_trip() {
        let f = MotionField::new(2, 3, vec![0, 1, 2, 510, 4, 5]).unwrap();
        assert_eq!(parse_field(&format_field(&f)).unwrap(), f);
        assert!(parse_field("1,2\n3\n").is_err());
        assert!(parse_field("600\n").is_err());
    }

    #[test]
    fn pairs_parse() {
        let p = parse_pairs("# c\nlambda = 0.01\n\nT=3 # trailing\n").unwrap();
        assert_eq!(p, vec![("lambda".into(), "0.01".into()), ("T".into(), "3".into())]);
        assert!(parse_pairs("novalue\n").is_err());
    }

    #[test]
    fn png_round_trip_is_exact_on_8bit_values() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.png");
        let img = Image::from_fn(5, 7, |i, j| ((i * 7 + j) * 3) as f64 / 255.0);
        write_png(&path, &img).unwrap();
        let back = read_png(&path).unwrap();
        assert_eq!(back.shape(), (5, 7, 1));
        assert!(back.max_abs_diff(&img).unwrap() < 1e-12);
        let rgb = Image::stack(&[img.clone(), img.scale(0.5), img.map(|v| 1.0 - v)]).unwrap();
        write_png(&path, &rgb).unwrap();
        let back = read_png(&path).unwrap();
        assert_eq!(back.channels(), 3);
        assert!(back.max_abs_diff(&rgb).unwrap() < 0.5 / 255.0 + 1e-12);
    }
}
