//! Renders a synthetic image next to several weakly and strongly
//! augmented views, writing `augment_views.png` to the working directory.
//! The weak/strong pair is what the pseudo-label filter compares.
//!
//! Run with `cargo run --example augment_views`.

use ssmae::augment::{augment, AugPolicy};
use ssmae::data::SyntheticSpec;
use ssmae::patch::ImageTensor;

fn to_rgb(img: &ImageTensor) -> image::RgbImage {
    let (h, w, c) = img.data.dim();
    image::RgbImage::from_fn(w as u32, h as u32, |x, y| {
        let px = |ch: usize| {
            let v = img.data[(y as usize, x as usize, ch.min(c - 1))];
            (v.clamp(0.0, 1.0) * 255.0).round() as u8
        };
        image::Rgb([px(0), px(1), px(2)])
    })
}

fn main() -> ssmae::Result<()> {
    let spec = SyntheticSpec {
        num_classes: 4,
        train_samples: 4,
        test_samples: 0,
        img_size: 32,
        channels: 3,
        seed: 11,
        noise_std: 0.05,
    };
    let ((images, _), _) = spec.generate();
    let original = &images[0];

    let views = 4usize;
    let (size, pad) = (32u32, 2u32);
    let cols = 1 + 2 * views as u32;
    let mut canvas = image::RgbImage::from_pixel(
        cols * (size + pad) + pad,
        size + 2 * pad,
        image::Rgb([255, 255, 255]),
    );
    let mut paste = |img: &ImageTensor, col: u32| {
        let rgb = to_rgb(img);
        for (x, y, p) in rgb.enumerate_pixels() {
            canvas.put_pixel(pad + col * (size + pad) + x, pad + y, *p);
        }
    };
    paste(original, 0);
    for v in 0..views {
        paste(&augment(original, AugPolicy::weak(), v as u64), 1 + v as u32);
        paste(
            &augment(original, AugPolicy::strong(), v as u64),
            1 + (views + v) as u32,
        );
    }
    canvas
        .save("augment_views.png")
        .map_err(ssmae::Error::from)?;
    println!(
        "wrote augment_views.png: original | {views} weak views | {views} strong views"
    );
    println!("the same seed always reproduces the same view");
    let a = augment(original, AugPolicy::strong(), 7);
    let b = augment(original, AugPolicy::strong(), 7);
    assert_eq!(a.data, b.data);
    Ok(())
}
