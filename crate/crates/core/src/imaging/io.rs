use super::{ImageRGB, ImagingError, Result};
use std::io::Cursor;
use std::path::Path;

/// Reads an 8-bit RGB or RGBA PNG. RGBA pixels are composited over
/// `background` as `a * src + (1 - a) * bg`.
pub fn load_image(path: &Path, background: [f64; 3]) -> Result<ImageRGB> {
    let bytes = match std::fs::read(path) {
        Ok(b) => b,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
            return Err(ImagingError::NotFound(path.to_path_buf()))
        }
        Err(e) => return Err(e.into()),
    };
    decode_png(&bytes, background).map_err(|reason| match reason {
        DecodeFailure::ZeroDimension(width, height) => {
            ImagingError::ZeroDimension { width, height }
        }
        DecodeFailure::Other(reason) => ImagingError::Unsupported {
            path: path.to_path_buf(),
            reason,
        },
    })
}

enum DecodeFailure {
    ZeroDimension(usize, usize),
    Other(String),
}

fn decode_png(bytes: &[u8], background: [f64; 3]) -> Result<ImageRGB, DecodeFailure> {
    let mut decoder = png::Decoder::new(Cursor::new(bytes));
    decoder.set_transformations(png::Transformations::IDENTITY);
    let mut reader = decoder
        .read_info()
        .map_err(|e| DecodeFailure::Other(e.to_string()))?;
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| DecodeFailure::Other("image too large".into()))?;
    let mut buf = vec![0u8; size];
    let info = reader
        .next_frame(&mut buf)
        .map_err(|e| DecodeFailure::Other(e.to_string()))?;
    if info.bit_depth != png::BitDepth::Eight {
        return Err(DecodeFailure::Other(format!(
            "bit depth {:?} (only 8-bit is supported)",
            info.bit_depth
        )));
    }
    let channels = match info.color_type {
        png::ColorType::Rgb => 3,
        png::ColorType::Rgba => 4,
        other => {
            return Err(DecodeFailure::Other(format!(
                "color type {other:?} (only RGB and RGBA are supported)"
            )))
        }
    };
    let (width, height) = (info.width as usize, info.height as usize);
    if width == 0 || height == 0 {
        return Err(DecodeFailure::ZeroDimension(width, height));
    }
    let mut data = Vec::with_capacity(width * height * 3);
    for y in 0..height {
        let row = &buf[y * info.line_size..][..width * channels];
        for px in row.chunks_exact(channels) {
            let alpha = if channels == 4 { px[3] as f64 / 255.0 } else { 1.0 };
            for c in 0..3 {
                let src = px[c] as f64 / 255.0;
                data.push(alpha * src + (1.0 - alpha) * background[c]);
            }
        }
    }
    ImageRGB::new(width, height, data).map_err(|e| DecodeFailure::Other(e.to_string()))
}

/// Encodes an image as an 8-bit RGB PNG, channel = round(v * 255).
pub fn png_bytes(img: &ImageRGB) -> Vec<u8> {
    let raw: Vec<u8> = img
        .as_slice()
        .iter()
        .map(|&v| (v * 255.0).round().clamp(0.0, 255.0) as u8)
        .collect();
    let mut out = Vec::new();
    {
        let mut encoder = png::Encoder::new(&mut out, img.width() as u32, img.height() as u32);
        encoder.set_color(png::ColorType::Rgb);
        encoder.set_depth(png::BitDepth::Eight);
        let mut writer = encoder.write_header().expect("in-memory PNG header");
        writer.write_image_data(&raw).expect("in-memory PNG data");
        writer.finish().expect("in-memory PNG finish");
    }
    out
}

pub fn save_image(img: &ImageRGB, path: &Path) -> Result<()> {
    std::fs::write(path, png_bytes(img))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imaging::WHITE;
    use proptest::prelude::*;

    fn write_rgba(path: &Path, w: u32, h: u32, pixels: &[u8]) {
        let file = std::fs::File::create(path).unwrap();
        let mut enc = png::Encoder::new(std::io::BufWriter::new(file), w, h);
        enc.set_color(png::ColorType::Rgba);
        enc.set_depth(png::BitDepth::Eight);
        enc.write_header().unwrap().write_image_data(pixels).unwrap();
    }

    #[test]
    fn rgba_composites_over_background() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.png");
        write_rgba(&path, 3, 1, &[255, 0, 0, 0, 255, 0, 0, 255, 255, 0, 0, 128]);
        let img = load_image(&path, WHITE).unwrap();
        assert_eq!(img.pixel(0, 0), [1.0, 1.0, 1.0]);
        assert_eq!(img.pixel(1, 0), [1.0, 0.0, 0.0]);
        let a = 128.0 / 255.0;
        let p = img.pixel(2, 0);
        assert!((p[0] - 1.0).abs() < 1e-12);
        assert!((p[1] - (1.0 - a)).abs() < 1e-12);
        assert!((p[1] - 0.49804).abs() < 1e-5);
        assert_eq!(p[1], p[2]);
    }

    #[test]
    fn rgba_over_black_background() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.png");
        write_rgba(&path, 1, 1, &[200, 100, 50, 0]);
        assert_eq!(load_image(&path, [0.0; 3]).unwrap().pixel(0, 0), [0.0; 3]);
    }

    #[test]
    fn missing_file_and_bad_formats_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(
            load_image(&dir.path().join("nope.png"), WHITE),
            Err(ImagingError::NotFound(_))
        ));

        let gray = dir.path().join("gray.png");
        {
            let file = std::fs::File::create(&gray).unwrap();
            let mut enc = png::Encoder::new(file, 1, 1);
            enc.set_color(png::ColorType::Grayscale);
            enc.set_depth(png::BitDepth::Eight);
            enc.write_header().unwrap().write_image_data(&[7]).unwrap();
        }
        assert!(matches!(
            load_image(&gray, WHITE),
            Err(ImagingError::Unsupported { .. })
        ));

        let deep = dir.path().join("deep.png");
        {
            let file = std::fs::File::create(&deep).unwrap();
            let mut enc = png::Encoder::new(file, 1, 1);
            enc.set_color(png::ColorType::Rgb);
            enc.set_depth(png::BitDepth::Sixteen);
            enc.write_header().unwrap().write_image_data(&[0; 6]).unwrap();
        }
        assert!(matches!(
            load_image(&deep, WHITE),
            Err(ImagingError::Unsupported { .. })
        ));

        let junk = dir.path().join("junk.png");
        std::fs::write(&junk, b"not a png").unwrap();
        assert!(load_image(&junk, WHITE).is_err());
    }

    #[test]
    fn quantization_rounds_half_away_from_zero() {
        let img = ImageRGB::new(2, 1, vec![1.0, 0.5, 0.0, 0.25, 0.75, 0.002]).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("q.png");
        save_image(&img, &path).unwrap();
        let back = load_image(&path, WHITE).unwrap();
        let bytes: Vec<u8> = back.as_slice().iter().map(|v| (v * 255.0).round() as u8).collect();
        // 0.25*255 = 63.75, 0.75*255 = 191.25, 0.002*255 = 0.51
        assert_eq!(bytes, vec![255, 128, 0, 64, 191, 1]);
    }

    #[test]
    fn unwritable_path_errors() {
        let img = ImageRGB::filled(1, 1, WHITE);
        assert!(save_image(&img, Path::new("/nonexistent-dir/x/y.png")).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn save_load_error_is_bounded(w in 1usize..9, h in 1usize..9, seed in any::<u64>()) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let img = ImageRGB::from_fn(w, h, |_, _| [rng.random(), rng.random(), rng.random()]);
            let dir = tempfile::tempdir().unwrap();
            let path = dir.path().join("r.png");
            save_image(&img, &path).unwrap();
            let back = load_image(&path, WHITE).unwrap();
            let max_err = img.as_slice().iter().zip(back.as_slice())
                .map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            prop_assert!(max_err <= 1.0 / 510.0 + 1e-12);
        }
    }
}
