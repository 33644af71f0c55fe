use ndarray::{Array2, Array3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Channel-major image, `channels × size × size`.
pub type Image = Array3<f64>;

/// Splits square images into non-overlapping square patches.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Patchifier {
    pub image_size: usize,
    pub patch_size: usize,
    pub channels: usize,
}

impl Patchifier {
    pub fn new(image_size: usize, patch_size: usize, channels: usize) -> Result<Self> {
        if patch_size == 0 || channels == 0 || image_size == 0 || !image_size.is_multiple_of(patch_size) {
            return Err(Error::config(format!(
                "image size {image_size} is not a positive multiple of patch size {patch_size}"
            )));
        }
        Ok(Self {
            image_size,
            patch_size,
            channels,
        })
    }

    /// J, the number of patches per image.
    pub fn num_patches(&self) -> usize {
        let side = self.image_size / self.patch_size;
        side * side
    }

    pub fn patch_dim(&self) -> usize {
        self.channels * self.patch_size * self.patch_size
    }

    /// Row-major patches, each flattened channel-first: `J × patch_dim`.
    pub fn patchify(&self, image: &Image) -> Result<Array2<f64>> {
        let expected = (self.channels, self.image_size, self.image_size);
        if image.dim() != expected {
            return Err(Error::data(format!(
                "image shape {:?} does not match patchifier {:?}",
                image.dim(),
                expected
            )));
        }
        let side = self.image_size / self.patch_size;
        let p = self.patch_size;
        let mut out = Array2::zeros((self.num_patches(), self.patch_dim()));
        for py in 0..side {
            for px in 0..side {
                let mut row = out.row_mut(py * side + px);
                let mut k = 0;
                for c in 0..self.channels {
                    for y in 0..p {
                        for x in 0..p {
                            row[k] = image[[c, py * p + y, px * p + x]];
                            k += 1;
                        }
                    }
                }
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn patch_layout() {
        let p = Patchifier::new(4, 2, 1).unwrap();
        let img = Image::from_shape_fn((1, 4, 4), |(_, y, x)| (y * 4 + x) as f64);
        let patches = p.patchify(&img).unwrap();
        assert_eq!(patches.dim(), (4, 4));
        assert_eq!(patches.row(0).to_vec(), vec![0.0, 1.0, 4.0, 5.0]);
        assert_eq!(patches.row(3).to_vec(), vec![10.0, 11.0, 14.0, 15.0]);
    }

    #[test]
    fn rejects_bad_geometry() {
        assert!(Patchifier::new(10, 3, 1).is_err());
        let p = Patchifier::new(4, 2, 1).unwrap();
        assert!(p.patchify(&Image::zeros((3, 4, 4))).is_err());
    }
}
