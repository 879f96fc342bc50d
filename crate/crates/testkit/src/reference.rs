//! Direct-loop reference computations.

/// Direct convolution over explicit loops: input N×C×H×W, weight O×C×KH×KW.
///
/// Output-centric with bounds checks; accumulation order per output cell is
/// in-channel, then kernel row, then kernel column, matching the canonical
/// summation order so exact agreement can be asserted.
#[allow(clippy::too_many_arguments)]
pub fn conv2d_ref(
    input: &[f64],
    ishape: (usize, usize, usize, usize),
    weight: &[f64],
    wshape: (usize, usize, usize, usize),
    stride: usize,
    padding: usize,
) -> (Vec<f64>, (usize, usize, usize, usize)) {
    let (n, c, h, w) = ishape;
    let (oc, ic, kh, kw) = wshape;
    assert_eq!(c, ic, "channel mismatch in reference conv");
    let oh = (h + 2 * padding - kh) / stride + 1;
    let ow = (w + 2 * padding - kw) / stride + 1;
    let mut out = vec![0.0; n * oc * oh * ow];
    for bn in 0..n {
        for o in 0..oc {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = 0.0;
                    for i in 0..c {
                        for ky in 0..kh {
                            for kx in 0..kw {
                                let iy = (oy * stride + ky) as isize - padding as isize;
                                let ix = (ox * stride + kx) as isize - padding as isize;
                                if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                                    continue;
                                }
                                acc += input[((bn * c + i) * h + iy as usize) * w + ix as usize]
                                    * weight[((o * c + i) * kh + ky) * kw + kx];
                            }
                        }
                    }
                    out[((bn * oc + o) * oh + oy) * ow + ox] = acc;
                }
            }
        }
    }
    (out, (n, oc, oh, ow))
}

/// Literal two-map fusion: upsample the last map, channel-pool it, broadcast
/// the pooled plane across the first map's channels, take the elementwise
/// product, then channel-pool the product.
pub fn fuse_ref(
    f_first: &[f64],
    first_shape: (usize, usize, usize),
    f_last: &[f64],
    last_shape: (usize, usize, usize),
) -> Vec<f64> {
    let (c, h, w) = first_shape;
    let (c2, h2, w2) = last_shape;

    // upsample each last-map channel to h×w with the floor index rule
    let mut up = vec![0.0; c2 * h * w];
    for ch in 0..c2 {
        for i in 0..h {
            let sy = i * h2 / h;
            for j in 0..w {
                let sx = j * w2 / w;
                up[(ch * h + i) * w + j] = f_last[(ch * h2 + sy) * w2 + sx];
            }
        }
    }

    // channel-pool the upsampled map
    let mut pooled_last = vec![0.0; h * w];
    for i in 0..h {
        for j in 0..w {
            let mut acc = 0.0;
            for ch in 0..c2 {
                acc += up[(ch * h + i) * w + j];
            }
            pooled_last[i * w + j] = acc / c2 as f64;
        }
    }

    // broadcast across the first map's channels, multiply, channel-pool
    let mut out = vec![0.0; h * w];
    for i in 0..h {
        for j in 0..w {
            let mut acc = 0.0;
            for ch in 0..c {
                acc += f_first[(ch * h + i) * w + j] * pooled_last[i * w + j];
            }
            out[i * w + j] = acc / c as f64;
        }
    }
    out
}
