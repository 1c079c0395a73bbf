use crate::error::Result;
use crate::rng::Rng;
use crate::tensor::Tensor;

/// Mirrors each image of an `[N, C, H, W]` tensor horizontally with
/// probability 0.5. Returns the result and the per-image flip mask.
pub fn augment_flip(images: &Tensor, rng: &mut Rng) -> Result<(Tensor, Vec<bool>)> {
    images.expect_rank("augment_flip", 4)?;
    let mask: Vec<bool> = (0..images.shape()[0]).map(|_| rng.bernoulli(0.5)).collect();
    Ok((flip_with_mask(images, &mask)?, mask))
}

/// Mirrors image `i` horizontally wherever `mask[i]` is set.
pub fn flip_with_mask(images: &Tensor, mask: &[bool]) -> Result<Tensor> {
    images.expect_rank("flip_with_mask", 4)?;
    let [n, c, h, w] = [images.shape()[0], images.shape()[1], images.shape()[2], images.shape()[3]];
    if mask.len() != n {
        return Err(crate::Error::dim("flip_with_mask", "batch", n, mask.len()));
    }
    let mut out = images.clone();
    let per_image = c * h * w;
    for (i, &flip) in mask.iter().enumerate() {
        if !flip {
            continue;
        }
        for row in out.data_mut()[i * per_image..(i + 1) * per_image].chunks_exact_mut(w) {
            row.reverse();
        }
    }
    Ok(out)
}
