//! File formats: PGM rasters, point CSVs, case metadata JSON, score maps,
//! and diagnostic overlays.
//!
//! Grayscale and mask files are PGM (P5), maxval 255 or 65535 with 16-bit
//! samples big-endian per the PGM spec. Score maps use a small ASCII header
//! followed by raw little-endian f32 samples.

use std::fs;
use std::io::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::image::{BinaryMask, CaseMeta, GrayImage, PointSet, Rect};
use crate::matching::ScoreMap;

fn io_err(path: &Path, source: std::io::Error) -> Error {
    Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn format_err(path: &Path, reason: impl Into<String>) -> Error {
    Error::RasterFormat {
        path: path.to_path_buf(),
        reason: reason.into(),
    }
}

struct PgmData {
    width: u32,
    height: u32,
    maxval: u16,
    /// Sample values, row-major, already widened to u16.
    samples: Vec<u16>,
}

/// Parses a binary PGM (P5). Header tokens may be separated by whitespace
/// and `#` comments.
fn parse_pgm(path: &Path, data: &[u8]) -> Result<PgmData> {
    if data.len() < 2 || &data[0..2] != b"P5" {
        if data.len() >= 2 && &data[0..2] == b"P6" {
            return Err(format_err(path, "multi-channel (P6) input; expected single-channel P5"));
        }
        return Err(format_err(path, "not a binary PGM (missing P5 magic)"));
    }
    let mut pos = 2usize;
    let mut fields = [0u64; 3];
    for field in fields.iter_mut() {
        // skip whitespace and comments
        loop {
            match data.get(pos) {
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(b'#') => {
                    while pos < data.len() && data[pos] != b'\n' {
                        pos += 1;
                    }
                }
                Some(_) => break,
                None => return Err(format_err(path, "truncated header")),
            }
        }
        let start = pos;
        while pos < data.len() && data[pos].is_ascii_digit() {
            pos += 1;
        }
        if pos == start {
            return Err(format_err(path, "non-numeric header field"));
        }
        *field = std::str::from_utf8(&data[start..pos])
            .unwrap()
            .parse()
            .map_err(|_| format_err(path, "header field overflow"))?;
    }
    match data.get(pos) {
        Some(b) if b.is_ascii_whitespace() => pos += 1,
        _ => return Err(format_err(path, "missing whitespace after maxval")),
    }
    let (width, height, maxval) = (fields[0], fields[1], fields[2]);
    if width == 0 || height == 0 {
        return Err(format_err(path, "zero-sized raster"));
    }
    if maxval == 0 || maxval > 65535 {
        return Err(format_err(path, format!("invalid maxval {maxval}")));
    }
    let (width, height, maxval) = (width as u32, height as u32, maxval as u16);
    let n = width as usize * height as usize;
    let bytes_per = if maxval > 255 { 2 } else { 1 };
    let body = &data[pos..];
    if body.len() < n * bytes_per {
        return Err(format_err(path, "truncated pixel data"));
    }
    let samples = if bytes_per == 1 {
        body[..n].iter().map(|&b| b as u16).collect()
    } else {
        body[..2 * n]
            .chunks_exact(2)
            .map(|c| u16::from_be_bytes([c[0], c[1]]))
            .collect()
    };
    Ok(PgmData {
        width,
        height,
        maxval,
        samples,
    })
}

fn write_pgm(path: &Path, width: u32, height: u32, maxval: u16, samples: &[u16]) -> Result<()> {
    let mut out = Vec::with_capacity(32 + samples.len() * 2);
    write!(out, "P5\n{width} {height}\n{maxval}\n").unwrap();
    if maxval > 255 {
        for &s in samples {
            out.extend_from_slice(&s.to_be_bytes());
        }
    } else {
        out.extend(samples.iter().map(|&s| s as u8));
    }
    fs::write(path, out).map_err(|e| io_err(path, e))
}

/// Loads a grayscale raster and normalizes intensities to `[0, 1]` by the
/// file's max code value.
pub fn load_gray_image(path: impl AsRef<Path>) -> Result<GrayImage> {
    let path = path.as_ref();
    let data = fs::read(path).map_err(|e| io_err(path, e))?;
    let pgm = parse_pgm(path, &data)?;
    let scale = 1.0 / pgm.maxval as f32;
    let pixels = pgm.samples.iter().map(|&s| s as f32 * scale).collect();
    GrayImage::new(pgm.width, pgm.height, pixels)
}

/// Saves a grayscale raster quantized to the given maxval (255 or 65535).
pub fn save_gray_image(image: &GrayImage, path: impl AsRef<Path>, maxval: u16) -> Result<()> {
    let path = path.as_ref();
    let samples: Vec<u16> = image
        .pixels
        .iter()
        .map(|&v| (v * maxval as f32).round() as u16)
        .collect();
    write_pgm(path, image.width, image.height, maxval, &samples)
}

/// Loads a binary mask. Pixels must be exactly 0 or maxval; intermediate
/// gray values are rejected rather than thresholded.
pub fn load_mask(path: impl AsRef<Path>) -> Result<BinaryMask> {
    let path = path.as_ref();
    let data = fs::read(path).map_err(|e| io_err(path, e))?;
    let pgm = parse_pgm(path, &data)?;
    let mut bits = Vec::with_capacity(pgm.samples.len());
    for &s in &pgm.samples {
        if s == 0 {
            bits.push(false);
        } else if s == pgm.maxval {
            bits.push(true);
        } else {
            return Err(Error::MaskGrayValue {
                path: path.to_path_buf(),
                value: s,
            });
        }
    }
    Ok(BinaryMask {
        width: pgm.width,
        height: pgm.height,
        bits,
    })
}

pub fn save_mask(mask: &BinaryMask, path: impl AsRef<Path>) -> Result<()> {
    let samples: Vec<u16> = mask.bits.iter().map(|&b| if b { 255 } else { 0 }).collect();
    write_pgm(path.as_ref(), mask.width, mask.height, 255, &samples)
}

/// Loads a point list from CSV (`x,y` per line, optional `x,y` header).
/// File order is preserved.
pub fn load_points(path: impl AsRef<Path>) -> Result<PointSet> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let mut points = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let line_no = idx + 1;
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        if idx == 0 && trimmed.eq_ignore_ascii_case("x,y") {
            continue;
        }
        let parse_err = |reason: String| Error::PointParse {
            path: path.to_path_buf(),
            line: line_no,
            reason,
        };
        let mut fields = trimmed.split(',');
        let (xs, ys) = match (fields.next(), fields.next(), fields.next()) {
            (Some(x), Some(y), None) => (x.trim(), y.trim()),
            _ => return Err(parse_err("expected exactly two fields".into())),
        };
        let x: f64 = xs
            .parse()
            .map_err(|_| parse_err(format!("non-numeric field {xs:?}")))?;
        let y: f64 = ys
            .parse()
            .map_err(|_| parse_err(format!("non-numeric field {ys:?}")))?;
        if x < 0.0 || y < 0.0 {
            return Err(parse_err(format!("negative coordinate ({x}, {y})")));
        }
        points.push((x, y));
    }
    Ok(PointSet::new(points))
}

pub fn save_points(points: &PointSet, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::from("x,y\n");
    for &(x, y) in &points.points {
        out.push_str(&format!("{x},{y}\n"));
    }
    fs::write(path, out).map_err(|e| io_err(path, e))
}

pub fn load_case_meta(path: impl AsRef<Path>) -> Result<CaseMeta> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let meta: CaseMeta = serde_json::from_str(&text).map_err(|e| Error::MetaFormat {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })?;
    meta.validate()?;
    Ok(meta)
}

pub fn save_case_meta(meta: &CaseMeta, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let text = serde_json::to_string_pretty(meta).expect("CaseMeta serializes");
    fs::write(path, text).map_err(|e| io_err(path, e))
}

/// Writes a score map: ASCII header `SCOREMAP v1 <width> <height>\n`
/// followed by row-major little-endian f32 samples.
pub fn save_score_map(map: &ScoreMap, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut out = Vec::with_capacity(32 + map.scores.len() * 4);
    writeln!(out, "SCOREMAP v1 {} {}", map.width, map.height).unwrap();
    for &s in &map.scores {
        out.extend_from_slice(&s.to_le_bytes());
    }
    fs::write(path, out).map_err(|e| io_err(path, e))
}

pub fn load_score_map(path: impl AsRef<Path>) -> Result<ScoreMap> {
    let path = path.as_ref();
    let data = fs::read(path).map_err(|e| io_err(path, e))?;
    let nl = data
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| format_err(path, "missing header line"))?;
    let header = std::str::from_utf8(&data[..nl])
        .map_err(|_| format_err(path, "non-UTF-8 header"))?;
    let parts: Vec<&str> = header.split_whitespace().collect();
    if parts.len() != 4 || parts[0] != "SCOREMAP" || parts[1] != "v1" {
        return Err(format_err(path, format!("bad header {header:?}")));
    }
    let width: u32 = parts[2]
        .parse()
        .map_err(|_| format_err(path, "bad width"))?;
    let height: u32 = parts[3]
        .parse()
        .map_err(|_| format_err(path, "bad height"))?;
    let n = width as usize * height as usize;
    let body = &data[nl + 1..];
    if body.len() != n * 4 {
        return Err(format_err(
            path,
            format!("expected {} sample bytes, got {}", n * 4, body.len()),
        ));
    }
    let scores = body
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    Ok(ScoreMap {
        width,
        height,
        scores,
        template_rotation: 0,
    })
}

/// Role of a rectangle in a diagnostic overlay.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BoxRole {
    Reference,
    Predicted,
}

/// Renders the grayscale image to RGB with 1-px rectangle borders drawn on
/// top: reference boxes in green, predicted in red, predicted drawn last.
/// Output is a binary PPM (P6).
pub fn render_overlay(
    image: &GrayImage,
    boxes: &[(Rect, BoxRole)],
    out_path: impl AsRef<Path>,
) -> Result<()> {
    let out_path = out_path.as_ref();
    for (rect, _) in boxes {
        if !rect.fits_within(image.width, image.height) {
            return Err(Error::OutOfBounds {
                x0: rect.x0 as i64,
                y0: rect.y0 as i64,
                w: rect.w,
                h: rect.h,
                width: image.width,
                height: image.height,
            });
        }
    }
    let n = image.pixels.len();
    let mut rgb = vec![0u8; n * 3];
    for (i, &v) in image.pixels.iter().enumerate() {
        let g = (v * 255.0).round() as u8;
        rgb[3 * i] = g;
        rgb[3 * i + 1] = g;
        rgb[3 * i + 2] = g;
    }
    let mut draw = |rect: &Rect, color: [u8; 3]| {
        let mut put = |x: u32, y: u32| {
            let i = (y as usize * image.width as usize + x as usize) * 3;
            rgb[i..i + 3].copy_from_slice(&color);
        };
        for x in rect.x0..rect.x1() {
            put(x, rect.y0);
            put(x, rect.y1() - 1);
        }
        for y in rect.y0..rect.y1() {
            put(rect.x0, y);
            put(rect.x1() - 1, y);
        }
    };
    for (rect, role) in boxes.iter().filter(|(_, r)| *r == BoxRole::Reference) {
        debug_assert_eq!(*role, BoxRole::Reference);
        draw(rect, [0, 255, 0]);
    }
    for (rect, _) in boxes.iter().filter(|(_, r)| *r == BoxRole::Predicted) {
        draw(rect, [255, 0, 0]);
    }
    let mut out = Vec::with_capacity(32 + rgb.len());
    write!(out, "P6\n{} {}\n255\n", image.width, image.height).unwrap();
    out.extend_from_slice(&rgb);
    fs::write(out_path, out).map_err(|e| io_err(out_path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::tempdir;

    #[test]
    fn gray_8bit_normalization() {
        let dir = tempdir().unwrap();
        let p = dir.path().join("g.pgm");
        // 3x2, values 0,51,102,153,204,255
        let mut data = b"P5\n3 2\n255\n".to_vec();
        data.extend_from_slice(&[0, 51, 102, 153, 204, 255]);
        fs::write(&p, data).unwrap();
        let img = load_gray_image(&p).unwrap();
        let expect = [0.0, 0.2, 0.4, 0.6, 0.8, 1.0];
        for (a, e) in img.pixels.iter().zip(expect) {
            assert!((a - e).abs() < 1e-6, "{a} vs {e}");
        }
    }

    #[test]
    fn gray_16bit_zero_and_max() {
        let dir = tempdir().unwrap();
        let p = dir.path().join("g16.pgm");
        let mut data = b"P5\n2 1\n65535\n".to_vec();
        data.extend_from_slice(&0u16.to_be_bytes());
        data.extend_from_slice(&65535u16.to_be_bytes());
        fs::write(&p, data).unwrap();
        let img = load_gray_image(&p).unwrap();
        assert_eq!(img.pixels[0], 0.0);
        assert_eq!(img.pixels[1], 1.0);
    }

    #[test]
    fn gray_rejects_multichannel_and_zero_size() {
        let dir = tempdir().unwrap();
        let p6 = dir.path().join("c.ppm");
        fs::write(&p6, b"P6\n1 1\n255\nabc").unwrap();
        assert!(matches!(load_gray_image(&p6), Err(Error::RasterFormat { .. })));
        let z = dir.path().join("z.pgm");
        fs::write(&z, b"P5\n0 0\n255\n").unwrap();
        assert!(load_gray_image(&z).is_err());
        assert!(load_gray_image(dir.path().join("missing.pgm")).is_err());
    }

    #[test]
    fn mask_rejects_intermediate_gray() {
        let dir = tempdir().unwrap();
        let p = dir.path().join("m.pgm");
        let mut data = b"P5\n2 1\n255\n".to_vec();
        data.extend_from_slice(&[0, 128]);
        fs::write(&p, data).unwrap();
        match load_mask(&p) {
            Err(Error::MaskGrayValue { value, .. }) => assert_eq!(value, 128),
            other => panic!("expected MaskGrayValue, got {other:?}"),
        }
    }

    #[test]
    fn mask_all_zero() {
        let dir = tempdir().unwrap();
        let p = dir.path().join("m.pgm");
        let mut data = b"P5\n4 3\n255\n".to_vec();
        data.extend_from_slice(&[0u8; 12]);
        fs::write(&p, data).unwrap();
        let m = load_mask(&p).unwrap();
        assert_eq!(m.count_set(), 0);
    }

    #[test]
    fn points_parse_and_errors() {
        let dir = tempdir().unwrap();
        let p = dir.path().join("pts.csv");
        fs::write(&p, "x,y\n10,20\n30.5,7\n").unwrap();
        let pts = load_points(&p).unwrap();
        assert_eq!(pts.points, vec![(10.0, 20.0), (30.5, 7.0)]);

        fs::write(&p, "x,y\n").unwrap();
        assert!(load_points(&p).unwrap().is_empty());

        fs::write(&p, "a,b\n").unwrap();
        match load_points(&p) {
            Err(Error::PointParse { line, .. }) => assert_eq!(line, 1),
            other => panic!("expected PointParse, got {other:?}"),
        }

        fs::write(&p, "1,2\n-3,4\n").unwrap();
        match load_points(&p) {
            Err(Error::PointParse { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected PointParse, got {other:?}"),
        }
    }

    #[test]
    fn points_roundtrip() {
        let dir = tempdir().unwrap();
        let p = dir.path().join("pts.csv");
        let pts = PointSet::new(vec![(1.25, 2.5), (103.0625, 7.0)]);
        save_points(&pts, &p).unwrap();
        let back = load_points(&p).unwrap();
        for (a, b) in pts.points.iter().zip(&back.points) {
            assert!((a.0 - b.0).abs() <= 1e-6 && (a.1 - b.1).abs() <= 1e-6);
        }
    }

    #[test]
    fn score_map_roundtrip() {
        let dir = tempdir().unwrap();
        let p = dir.path().join("s.scoremap");
        let map = ScoreMap {
            width: 3,
            height: 2,
            scores: vec![0.0, 1.5, 2.0, -0.0, 7.25, 9.0],
            template_rotation: 0,
        };
        save_score_map(&map, &p).unwrap();
        let back = load_score_map(&p).unwrap();
        assert_eq!(back.width, 3);
        assert_eq!(back.height, 2);
        assert_eq!(back.scores, map.scores);
    }

    #[test]
    fn overlay_no_boxes_is_gray_triplicate() {
        let dir = tempdir().unwrap();
        let p = dir.path().join("o.ppm");
        let img = GrayImage::new(2, 2, vec![0.0, 0.5, 1.0, 0.25]).unwrap();
        render_overlay(&img, &[], &p).unwrap();
        let data = fs::read(&p).unwrap();
        let body = &data[data.len() - 12..];
        for (i, &v) in img.pixels.iter().enumerate() {
            let g = (v * 255.0).round() as u8;
            assert_eq!(&body[3 * i..3 * i + 3], &[g, g, g]);
        }
    }

    #[test]
    fn overlay_border_pixels_recolored() {
        let dir = tempdir().unwrap();
        let p = dir.path().join("o.ppm");
        let img = GrayImage::zeros(8, 8);
        render_overlay(&img, &[(Rect::new(1, 1, 4, 3), BoxRole::Predicted)], &p).unwrap();
        let data = fs::read(&p).unwrap();
        let body = &data[data.len() - 8 * 8 * 3..];
        let red = body
            .chunks_exact(3)
            .filter(|c| c == &[255u8, 0, 0])
            .count();
        // 4x3 border: 2*4 + 2*3 - 4 corners counted once
        assert_eq!(red, 10);
    }

    #[test]
    fn overlay_predicted_drawn_last() {
        let dir = tempdir().unwrap();
        let p = dir.path().join("o.ppm");
        let img = GrayImage::zeros(8, 8);
        let r = Rect::new(2, 2, 3, 3);
        render_overlay(
            &img,
            &[(r, BoxRole::Predicted), (r, BoxRole::Reference)],
            &p,
        )
        .unwrap();
        let data = fs::read(&p).unwrap();
        let body = &data[data.len() - 8 * 8 * 3..];
        let red = body.chunks_exact(3).filter(|c| c == &[255u8, 0, 0]).count();
        let green = body.chunks_exact(3).filter(|c| c == &[0u8, 255, 0]).count();
        assert_eq!(red, 8);
        assert_eq!(green, 0);
    }

    #[test]
    fn overlay_rejects_out_of_bounds_box() {
        let dir = tempdir().unwrap();
        let img = GrayImage::zeros(4, 4);
        let err = render_overlay(
            &img,
            &[(Rect::new(3, 3, 2, 2), BoxRole::Reference)],
            dir.path().join("o.ppm"),
        );
        assert!(matches!(err, Err(Error::OutOfBounds { .. })));
    }
}
