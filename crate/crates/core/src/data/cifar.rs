//! CIFAR-style binary archives: each record is 1 label byte followed by
//! H·W·C pixel bytes in channel-major order.

use std::fs::File;
use std::io::Read;
use std::path::Path;

use ndarray::Array3;

use crate::patch::ImageTensor;
use crate::{Error, Result};

pub fn read_records(
    path: &Path,
    height: usize,
    width: usize,
    channels: usize,
) -> Result<(Vec<ImageTensor>, Vec<usize>)> {
    let record_len = 1 + height * width * channels;
    let mut bytes = Vec::new();
    File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    if bytes.is_empty() || bytes.len() % record_len != 0 {
        return Err(Error::Data(format!(
            "{}: size {} is not a multiple of the {record_len}-byte record",
            path.display(),
            bytes.len()
        )));
    }
    let count = bytes.len() / record_len;
    let mut images = Vec::with_capacity(count);
    let mut labels = Vec::with_capacity(count);
    for r in 0..count {
        let record = &bytes[r * record_len..(r + 1) * record_len];
        labels.push(record[0] as usize);
        let pixels = &record[1..];
        let plane = height * width;
        let data = Array3::from_shape_fn((height, width, channels), |(i, j, c)| {
            pixels[c * plane + i * width + j] as f64 / 255.0
        });
        images.push(ImageTensor::new(data));
    }
    Ok((images, labels))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    #[test]
    fn parses_four_records() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("batch.bin");
        let mut bytes = Vec::new();
        for label in 0..4u8 {
            bytes.push(label);
            bytes.extend(std::iter::repeat_n(label * 10, 3 * 32 * 32));
        }
        File::create(&path).unwrap().write_all(&bytes).unwrap();
        let (images, labels) = read_records(&path, 32, 32, 3).unwrap();
        assert_eq!(images.len(), 4);
        assert_eq!(labels, vec![0, 1, 2, 3]);
        assert_eq!(images[0].data.shape(), &[32, 32, 3]);
        assert!((images[2].data[(5, 5, 1)] - 20.0 / 255.0).abs() < 1e-12);
    }

    #[test]
    fn rejects_truncated_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.bin");
        File::create(&path).unwrap().write_all(&[0u8; 100]).unwrap();
        let err = read_records(&path, 32, 32, 3).unwrap_err().to_string();
        assert!(err.contains("bad.bin"));
    }
}
