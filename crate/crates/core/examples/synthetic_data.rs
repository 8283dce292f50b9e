//! Generates the synthetic texture dataset used by the toy profile,
//! prints class statistics, and writes a class montage PNG (one row per
//! class) to the working directory.
//!
//! Run with `cargo run --example synthetic_data`.

use ssmae::data::SyntheticSpec;
use ssmae::patch::ImageTensor;

fn main() -> ssmae::Result<()> {
    let spec = SyntheticSpec {
        num_classes: 4,
        train_samples: 2000,
        test_samples: 400,
        img_size: 16,
        channels: 3,
        seed: 77,
        noise_std: 0.5,
    };
    let ((train_images, train_labels), (test_images, _)) = spec.generate();
    println!(
        "train {} / test {} images at {}x{}x{}",
        train_images.len(),
        test_images.len(),
        spec.img_size,
        spec.img_size,
        spec.channels
    );
    for class in 0..spec.num_classes {
        let count = train_labels.iter().filter(|&&l| l == class).count();
        println!("class {class}: {count} train samples");
    }

    let per_class = 8usize;
    let (size, pad) = (spec.img_size as u32, 2u32);
    let mut canvas = image::RgbImage::from_pixel(
        per_class as u32 * (size + pad) + pad,
        spec.num_classes as u32 * (size + pad) + pad,
        image::Rgb([255, 255, 255]),
    );
    let paste = |canvas: &mut image::RgbImage, img: &ImageTensor, row: u32, col: u32| {
        for i in 0..size {
            for j in 0..size {
                let px = |c: usize| {
                    let v = img.data[(i as usize, j as usize, c)];
                    (v.clamp(0.0, 1.0) * 255.0).round() as u8
                };
                canvas.put_pixel(
                    pad + col * (size + pad) + j,
                    pad + row * (size + pad) + i,
                    image::Rgb([px(0), px(1), px(2)]),
                );
            }
        }
    };
    for class in 0..spec.num_classes {
        let members: Vec<_> = train_images
            .iter()
            .zip(&train_labels)
            .filter(|(_, &l)| l == class)
            .map(|(im, _)| im)
            .take(per_class)
            .collect();
        for (col, img) in members.iter().enumerate() {
            paste(&mut canvas, img, class as u32, col as u32);
        }
    }
    canvas
        .save("synthetic_classes.png")
        .map_err(ssmae::Error::from)?;
    println!("wrote synthetic_classes.png (one row per class)");
    Ok(())
}
