//! 8-bit RGB PNG files as `[3, H, W]` tensors in `[0, 1]`.

use std::path::Path;

use image::{ImageFormat, RgbImage};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Pixel bytes to a planar `[3, H, W]` tensor (`byte / 255`).
pub fn from_rgb8(img: &RgbImage) -> Tensor<f32> {
    let (w, h) = (img.width() as usize, img.height() as usize);
    let mut data = vec![0.0f32; 3 * h * w];
    for (x, y, px) in img.enumerate_pixels() {
        for c in 0..3 {
            data[(c * h + y as usize) * w + x as usize] = f32::from(px[c]) / 255.0;
        }
    }
    Tensor::from_vec(&[3, h, w], data).expect("consistent image shape")
}

/// Planar tensor to bytes, clamping to `[0, 1]` and rounding half away from zero.
pub fn to_rgb8(t: &Tensor<f32>) -> Result<RgbImage> {
    let &[3, h, w] = t.shape() else {
        return Err(Error::ShapeMismatch {
            op: "to_rgb8",
            left: t.shape().to_vec(),
            right: vec![3, 0, 0],
        });
    };
    let d = t.data();
    Ok(RgbImage::from_fn(w as u32, h as u32, |x, y| {
        let at = |c: usize| {
            let v = d[(c * h + y as usize) * w + x as usize];
            (v.clamp(0.0, 1.0) * 255.0).round() as u8
        };
        image::Rgb([at(0), at(1), at(2)])
    }))
}

pub fn load_image(path: &Path) -> Result<Tensor<f32>> {
    let img = image::open(path).map_err(|source| Error::Image {
        path: path.to_owned(),
        source,
    })?;
    Ok(from_rgb8(&img.to_rgb8()))
}

pub fn save_image(t: &Tensor<f32>, path: &Path) -> Result<()> {
    to_rgb8(t)?
        .save_with_format(path, ImageFormat::Png)
        .map_err(|source| Error::Image {
            path: path.to_owned(),
            source,
        })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    #[test]
    fn black_and_white_bytes() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("k.png");
        RgbImage::new(4, 3).save(&p).unwrap();
        let t = load_image(&p).unwrap();
        assert_eq!(t.shape(), &[3, 3, 4]);
        assert!(t.data().iter().all(|&v| v == 0.0));

        RgbImage::from_pixel(2, 2, image::Rgb([255, 255, 255])).save(&p).unwrap();
        assert!(load_image(&p).unwrap().data().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn random_bytes_round_trip_exactly() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let img = RgbImage::from_fn(17, 9, |_, _| image::Rgb([rng.gen(), rng.gen(), rng.gen()]));
        let dir = tempfile::tempdir().unwrap();
        let (a, b) = (dir.path().join("a.png"), dir.path().join("b.png"));
        img.save(&a).unwrap();
        let t = load_image(&a).unwrap();
        save_image(&t, &b).unwrap();
        assert_eq!(image::open(&b).unwrap().to_rgb8(), img);
        assert_eq!(load_image(&b).unwrap().data(), t.data());
    }

    #[test]
    fn saving_clamps_and_rounds() {
        let t = Tensor::from_vec(&[3, 1, 2], vec![-0.5, 2.0, 0.5 / 255.0, 1.49 / 255.0, 0.5, 1.0]).unwrap();
        let img = to_rgb8(&t).unwrap();
        assert_eq!(img.get_pixel(0, 0).0, [0, 1, 128]);
        assert_eq!(img.get_pixel(1, 0).0, [255, 1, 255]);
    }

    #[test]
    fn malformed_file_reports_path() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("junk.png");
        std::fs::write(&p, b"not a png").unwrap();
        assert!(load_image(&p).unwrap_err().to_string().contains("junk.png"));
    }
}
