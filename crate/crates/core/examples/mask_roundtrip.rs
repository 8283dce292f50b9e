//! Walks through the mask bookkeeping on one image: patchify, draw a
//! seeded mask plan, gather the visible patches, scatter them back with a
//! fill vector, and reassemble the image.
//!
//! Run with `cargo run --example mask_roundtrip`.

use ndarray::Array1;
use ssmae::patch::{
    gather_visible, make_mask_plan, patchify, unpatchify, unshuffle_tokens, ImageTensor,
};

fn main() -> ssmae::Result<()> {
    let (h, w, c, p) = (16, 16, 3, 4);
    let image = ImageTensor::new(ndarray::Array3::from_shape_fn((h, w, c), |(i, j, k)| {
        ((i * w + j) * c + k) as f64 / (h * w * c) as f64
    }));

    let grid = patchify(&image, p)?;
    println!(
        "{}x{}x{} image -> {} patches of dim {}",
        h,
        w,
        c,
        grid.num_patches(),
        grid.row_width()
    );

    let ratio = 0.75;
    let plan = make_mask_plan(grid.num_patches(), ratio, 42)?;
    println!(
        "mask ratio {ratio}: {} visible, {} masked",
        plan.num_visible,
        plan.masked_idx().len()
    );
    println!("visible indices: {:?}", plan.visible_idx());

    let visible = gather_visible(grid.rows.view(), &plan)?;
    assert_eq!(visible.nrows(), plan.num_visible);

    // scatter back with a sentinel fill standing in for the mask token
    let fill = Array1::from_elem(grid.row_width(), -1.0);
    let restored = unshuffle_tokens(visible.view(), fill.view(), &plan)?;
    let sentinel_rows = restored
        .rows()
        .into_iter()
        .filter(|r| r.iter().all(|&v| v == -1.0))
        .count();
    println!("rows holding the fill vector after unshuffle: {sentinel_rows}");

    // visible patches alone reassemble into the original pixels
    let mut check = grid.clone();
    check.rows = restored;
    let rebuilt = unpatchify(&check, h, w, c)?;
    let unchanged = rebuilt
        .data
        .iter()
        .zip(image.data.iter())
        .filter(|(a, b)| a == b)
        .count();
    println!(
        "pixels untouched by masking: {unchanged} of {}",
        h * w * c
    );
    Ok(())
}
