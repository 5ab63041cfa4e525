use ndarray::{s, Array2};

use crate::error::{Error, Result};

/// Row `i` is `embed[tokens[i]]`.
pub fn embed_rows(embed: &Array2<f64>, tokens: &[usize]) -> Result<Array2<f64>> {
    let size = embed.nrows();
    let mut out = Array2::zeros((tokens.len(), embed.ncols()));
    for (mut r, &t) in out.rows_mut().into_iter().zip(tokens) {
        if t >= size {
            return Err(Error::TokenOutOfRange { id: t, size });
        }
        r.assign(&embed.row(t));
    }
    Ok(out)
}

/// `patches · w_img`.
pub fn project_image(patches: &Array2<f64>, w_img: &Array2<f64>) -> Result<Array2<f64>> {
    if patches.ncols() != w_img.nrows() {
        return Err(Error::DimensionMismatch { expected: w_img.nrows(), got: patches.ncols() });
    }
    Ok(patches.dot(w_img))
}

/// Row-wise stack in the order KG, image, language.
pub fn fuse(h_kg: &Array2<f64>, h_img: &Array2<f64>, h_lang: &Array2<f64>) -> Result<Array2<f64>> {
    let d = h_lang.ncols();
    for (block, h) in [("kg", h_kg), ("image", h_img)] {
        if h.ncols() != d {
            return Err(Error::WidthMismatch { block, expected: d, got: h.ncols() });
        }
    }
    let (p, m, n) = (h_kg.nrows(), h_img.nrows(), h_lang.nrows());
    let mut out = Array2::zeros((p + m + n, d));
    out.slice_mut(s![..p, ..]).assign(h_kg);
    out.slice_mut(s![p..p + m, ..]).assign(h_img);
    out.slice_mut(s![p + m.., ..]).assign(h_lang);
    Ok(out)
}
