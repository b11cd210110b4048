//! Slice-level kernels shared by the graph ops and the sensor pipeline.

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeom {
    pub in_c: usize,
    pub in_h: usize,
    pub in_w: usize,
    pub out_c: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
    pub groups: usize,
}

impl ConvGeom {
    pub fn out_h(&self) -> usize {
        (self.in_h + 2 * self.pad - self.k) / self.stride + 1
    }

    pub fn out_w(&self) -> usize {
        (self.in_w + 2 * self.pad - self.k) / self.stride + 1
    }

    /// Output positions `o` along one axis whose tap `o*stride + kk - pad` lands inside `[0, len)`.
    fn valid_range(&self, kk: usize, len: usize, out_len: usize) -> (usize, usize) {
        let lo = if self.pad > kk {
            (self.pad - kk).div_ceil(self.stride)
        } else {
            0
        };
        if len + self.pad <= kk {
            return (0, 0);
        }
        let hi = ((len - 1 + self.pad - kk) / self.stride + 1).min(out_len);
        (lo.min(hi), hi)
    }
}

pub fn conv2d_forward(g: &ConvGeom, x: &[f64], w: &[f64], bias: Option<&[f64]>) -> Vec<f64> {
    let (oh, ow) = (g.out_h(), g.out_w());
    let cpg = g.in_c / g.groups;
    let opg = g.out_c / g.groups;
    let mut out = vec![0.0; g.out_c * oh * ow];
    for oc in 0..g.out_c {
        let grp = oc / opg;
        let plane = &mut out[oc * oh * ow..(oc + 1) * oh * ow];
        if let Some(b) = bias {
            plane.iter_mut().for_each(|v| *v = b[oc]);
        }
        for ic in 0..cpg {
            let cin = grp * cpg + ic;
            let xin = &x[cin * g.in_h * g.in_w..(cin + 1) * g.in_h * g.in_w];
            for ky in 0..g.k {
                let (oy0, oy1) = g.valid_range(ky, g.in_h, oh);
                for kx in 0..g.k {
                    let wv = w[((oc * cpg + ic) * g.k + ky) * g.k + kx];
                    let (ox0, ox1) = g.valid_range(kx, g.in_w, ow);
                    for oy in oy0..oy1 {
                        let iy = oy * g.stride + ky - g.pad;
                        let row = &xin[iy * g.in_w..(iy + 1) * g.in_w];
                        let orow = &mut plane[oy * ow..(oy + 1) * ow];
                        if g.stride == 1 {
                            let base = kx as isize - g.pad as isize;
                            for ox in ox0..ox1 {
                                orow[ox] += wv * row[(ox as isize + base) as usize];
                            }
                        } else {
                            for ox in ox0..ox1 {
                                orow[ox] += wv * row[ox * g.stride + kx - g.pad];
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

/// Accumulates input, weight and bias gradients for one convolution.
pub fn conv2d_backward(
    g: &ConvGeom,
    x: &[f64],
    w: &[f64],
    gout: &[f64],
    mut gx: Option<&mut [f64]>,
    mut gw: Option<&mut [f64]>,
    gb: Option<&mut [f64]>,
) {
    let (oh, ow) = (g.out_h(), g.out_w());
    let cpg = g.in_c / g.groups;
    let opg = g.out_c / g.groups;
    if let Some(gb) = gb {
        for oc in 0..g.out_c {
            gb[oc] += gout[oc * oh * ow..(oc + 1) * oh * ow].iter().sum::<f64>();
        }
    }
    for oc in 0..g.out_c {
        let grp = oc / opg;
        let gplane = &gout[oc * oh * ow..(oc + 1) * oh * ow];
        for ic in 0..cpg {
            let cin = grp * cpg + ic;
            let off = cin * g.in_h * g.in_w;
            for ky in 0..g.k {
                let (oy0, oy1) = g.valid_range(ky, g.in_h, oh);
                for kx in 0..g.k {
                    let widx = ((oc * cpg + ic) * g.k + ky) * g.k + kx;
                    let wv = w[widx];
                    let (ox0, ox1) = g.valid_range(kx, g.in_w, ow);
                    let mut acc = 0.0;
                    for oy in oy0..oy1 {
                        let iy = oy * g.stride + ky - g.pad;
                        let grow = &gplane[oy * ow..(oy + 1) * ow];
                        let rbase = off + iy * g.in_w;
                        for ox in ox0..ox1 {
                            let ix = ox * g.stride + kx - g.pad;
                            let gv = grow[ox];
                            acc += gv * x[rbase + ix];
                            if let Some(gx) = gx.as_deref_mut() {
                                gx[rbase + ix] += wv * gv;
                            }
                        }
                    }
                    if let Some(gw) = gw.as_deref_mut() {
                        gw[widx] += acc;
                    }
                }
            }
        }
    }
}

/// Stride-1 average pooling with zero padding `(k-1)/2` and the fixed divisor `k*k`.
///
/// The zero-padded box filter is symmetric, so the same routine also computes
/// its own adjoint.
pub fn box_pool_same(x: &[f64], c: usize, h: usize, w: usize, k: usize) -> Vec<f64> {
    let r = (k - 1) / 2;
    let norm = 1.0 / (k * k) as f64;
    let mut tmp = vec![0.0; c * h * w];
    let mut out = vec![0.0; c * h * w];
    for ch in 0..c {
        let plane = &x[ch * h * w..(ch + 1) * h * w];
        let tplane = &mut tmp[ch * h * w..(ch + 1) * h * w];
        for y in 0..h {
            let row = &plane[y * w..(y + 1) * w];
            for xx in 0..w {
                let lo = xx.saturating_sub(r);
                let hi = (xx + r + 1).min(w);
                tplane[y * w + xx] = row[lo..hi].iter().sum();
            }
        }
        let oplane = &mut out[ch * h * w..(ch + 1) * h * w];
        for y in 0..h {
            let lo = y.saturating_sub(r);
            let hi = (y + r + 1).min(h);
            for xx in 0..w {
                let mut s = 0.0;
                for yy in lo..hi {
                    s += tplane[yy * w + xx];
                }
                oplane[y * w + xx] = s * norm;
            }
        }
    }
    out
}

/// Source taps for half-pixel-centred bilinear resampling along one axis.
fn bilinear_taps(out_len: usize, in_len: usize) -> Vec<(usize, usize, f64)> {
    let scale = in_len as f64 / out_len as f64;
    (0..out_len)
        .map(|o| {
            let src = ((o as f64 + 0.5) * scale - 0.5).max(0.0);
            let i0 = (src.floor() as usize).min(in_len - 1);
            let i1 = (i0 + 1).min(in_len - 1);
            (i0, i1, src - i0 as f64)
        })
        .collect()
}

pub fn bilinear_resize(x: &[f64], c: usize, h: usize, w: usize, oh: usize, ow: usize) -> Vec<f64> {
    let ty = bilinear_taps(oh, h);
    let tx = bilinear_taps(ow, w);
    let mut out = vec![0.0; c * oh * ow];
    for ch in 0..c {
        let p = &x[ch * h * w..(ch + 1) * h * w];
        for (oy, &(y0, y1, ly)) in ty.iter().enumerate() {
            for (ox, &(x0, x1, lx)) in tx.iter().enumerate() {
                let top = p[y0 * w + x0] * (1.0 - lx) + p[y0 * w + x1] * lx;
                let bot = p[y1 * w + x0] * (1.0 - lx) + p[y1 * w + x1] * lx;
                out[(ch * oh + oy) * ow + ox] = top * (1.0 - ly) + bot * ly;
            }
        }
    }
    out
}

pub fn bilinear_resize_backward(
    gout: &[f64],
    c: usize,
    h: usize,
    w: usize,
    oh: usize,
    ow: usize,
    gx: &mut [f64],
) {
    let ty = bilinear_taps(oh, h);
    let tx = bilinear_taps(ow, w);
    for ch in 0..c {
        let gp = &mut gx[ch * h * w..(ch + 1) * h * w];
        for (oy, &(y0, y1, ly)) in ty.iter().enumerate() {
            for (ox, &(x0, x1, lx)) in tx.iter().enumerate() {
                let g = gout[(ch * oh + oy) * ow + ox];
                gp[y0 * w + x0] += g * (1.0 - ly) * (1.0 - lx);
                gp[y0 * w + x1] += g * (1.0 - ly) * lx;
                gp[y1 * w + x0] += g * ly * (1.0 - lx);
                gp[y1 * w + x1] += g * ly * lx;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn valid_range_matches_bounds_check() {
        for (len, k, stride, pad) in [(5, 3, 1, 1), (7, 7, 4, 3), (6, 3, 2, 1), (1, 3, 1, 1), (2, 11, 1, 5)] {
            let g = ConvGeom {
                in_c: 1,
                in_h: len,
                in_w: len,
                out_c: 1,
                k,
                stride,
                pad,
                groups: 1,
            };
            let out = g.out_h();
            for kk in 0..k {
                let (lo, hi) = g.valid_range(kk, len, out);
                for o in 0..out {
                    let pos = (o * stride + kk) as isize - pad as isize;
                    let inside = pos >= 0 && (pos as usize) < len;
                    assert_eq!(inside, o >= lo && o < hi, "len {len} k {k} kk {kk} o {o}");
                }
            }
        }
    }
}
