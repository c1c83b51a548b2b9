//! Batched jet propagation through the modified MLP and its reverse pass.
//!
//! Points are processed in fixed-size chunks. Inside a chunk every
//! activation is a `(C P) x width` row-major matrix whose rows are grouped by
//! channel: rows `c P .. (c + 1) P` hold channel `c` (value, then `d` first
//! derivatives, then `d` pure second derivatives) for the `P` points. Linear
//! maps act on all channels at once; biases only touch the value channel.
//! Chunk results are combined in chunk order, so reductions do not depend on
//! the thread count.

use matrixmultiply::dgemm;
use rayon::prelude::*;

use super::{Architecture, FeatureMap, Layout, NetworkParams};
use crate::basis::PointSet;

/// Points per chunk.
pub const CHUNK: usize = 256;

/// Feature jets of a point set, precomputed once; they do not depend on the
/// network parameters.
#[derive(Clone, Debug)]
pub struct Prepared {
    d: usize,
    channels: usize,
    features: usize,
    len: usize,
    chunks: Vec<Vec<f64>>,
}

impl Prepared {
    pub fn new(fmap: &FeatureMap, points: &PointSet, derivatives: bool) -> Self {
        let d = fmap.dim();
        assert_eq!(points.dim(), d, "point dimension");
        let channels = if derivatives { 1 + 2 * d } else { 1 };
        let m = fmap.output_dim();
        let starts: Vec<usize> = (0..points.len()).step_by(CHUNK).collect();
        let chunks = starts
            .par_iter()
            .map(|&start| {
                let p = CHUNK.min(points.len() - start);
                let mut buf = vec![0.0; channels * p * m];
                let mut jet = vec![0.0; channels * m];
                for i in 0..p {
                    fmap.jet_into(points.point(start + i), channels, m, &mut jet);
                    for c in 0..channels {
                        let row = c * p + i;
                        buf[row * m..(row + 1) * m].copy_from_slice(&jet[c * m..(c + 1) * m]);
                    }
                }
                buf
            })
            .collect();
        Self {
            d,
            channels,
            features: m,
            len: points.len(),
            chunks,
        }
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn features(&self) -> usize {
        self.features
    }

    fn chunk_points(&self, idx: usize) -> usize {
        CHUNK.min(self.len - idx * CHUNK)
    }
}

/// Per-point jets, point-major: `data[p * channels + c]`.
#[derive(Clone, Debug, PartialEq)]
pub struct JetField {
    pub d: usize,
    pub channels: usize,
    pub data: Vec<f64>,
}

impl JetField {
    pub fn zeros(d: usize, channels: usize, len: usize) -> Self {
        Self {
            d,
            channels,
            data: vec![0.0; len * channels],
        }
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.channels
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn point(&self, p: usize) -> &[f64] {
        &self.data[p * self.channels..(p + 1) * self.channels]
    }

    pub fn point_mut(&mut self, p: usize) -> &mut [f64] {
        &mut self.data[p * self.channels..(p + 1) * self.channels]
    }

    pub fn value(&self, p: usize) -> f64 {
        self.data[p * self.channels]
    }

    pub fn values(&self) -> Vec<f64> {
        self.data.iter().step_by(self.channels).copied().collect()
    }
}

struct LayerTape {
    z: Vec<f64>,
    f: Vec<f64>,
    g: Vec<f64>,
}

struct ChunkTape {
    zu: Vec<f64>,
    u: Vec<f64>,
    zv: Vec<f64>,
    v: Vec<f64>,
    diff: Vec<f64>,
    layers: Vec<LayerTape>,
}

/// Intermediate activations kept for the reverse pass.
pub struct Tape {
    chunks: Vec<ChunkTape>,
}

// Z (rows x out) = X (rows x inp) W^T, W row-major out x inp.
fn mul_xwt(rows: usize, inp: usize, out: usize, x: &[f64], w: &[f64], z: &mut [f64]) {
    debug_assert!(x.len() >= rows * inp && w.len() >= out * inp && z.len() >= rows * out);
    unsafe {
        dgemm(
            rows,
            inp,
            out,
            1.0,
            x.as_ptr(),
            inp as isize,
            1,
            w.as_ptr(),
            1,
            inp as isize,
            0.0,
            z.as_mut_ptr(),
            out as isize,
            1,
        );
    }
}

// G (rows x inp) = Zb (rows x out) W.
fn mul_zw(rows: usize, out: usize, inp: usize, zb: &[f64], w: &[f64], g: &mut [f64]) {
    debug_assert!(zb.len() >= rows * out && w.len() >= out * inp && g.len() >= rows * inp);
    unsafe {
        dgemm(
            rows,
            out,
            inp,
            1.0,
            zb.as_ptr(),
            out as isize,
            1,
            w.as_ptr(),
            inp as isize,
            1,
            0.0,
            g.as_mut_ptr(),
            inp as isize,
            1,
        );
    }
}

// Wb (out x inp) += Zb^T X.
fn mul_ztx(rows: usize, out: usize, inp: usize, zb: &[f64], x: &[f64], wb: &mut [f64]) {
    debug_assert!(zb.len() >= rows * out && x.len() >= rows * inp && wb.len() >= out * inp);
    unsafe {
        dgemm(
            out,
            rows,
            inp,
            1.0,
            zb.as_ptr(),
            1,
            out as isize,
            x.as_ptr(),
            inp as isize,
            1,
            1.0,
            wb.as_mut_ptr(),
            inp as isize,
            1,
        );
    }
}

fn add_bias(z: &mut [f64], b: &[f64], p: usize) {
    let w = b.len();
    for row in z[..p * w].chunks_exact_mut(w) {
        for (zi, bi) in row.iter_mut().zip(b) {
            *zi += bi;
        }
    }
}

fn bias_grad(zb: &[f64], p: usize, gb: &mut [f64]) {
    let w = gb.len();
    for row in zb[..p * w].chunks_exact(w) {
        for (g, z) in gb.iter_mut().zip(row) {
            *g += z;
        }
    }
}

fn tanh_forward(z: &[f64], f: &mut [f64], d: usize, ch: usize, block: usize) {
    for q in 0..block {
        let t = z[q].tanh();
        f[q] = t;
        if ch > 1 {
            let s = 1.0 - t * t;
            let sp = -2.0 * t * s;
            for j in 0..d {
                let dz = z[(1 + j) * block + q];
                let d2z = z[(1 + d + j) * block + q];
                f[(1 + j) * block + q] = s * dz;
                f[(1 + d + j) * block + q] = sp * dz * dz + s * d2z;
            }
        }
    }
}

fn tanh_backward(z: &[f64], f: &[f64], fb: &[f64], zb: &mut [f64], d: usize, ch: usize, block: usize) {
    for q in 0..block {
        let t = f[q];
        let s = 1.0 - t * t;
        let mut acc = fb[q] * s;
        if ch > 1 {
            let sp = -2.0 * t * s;
            let spp = -2.0 * s * s + 4.0 * t * t * s;
            for j in 0..d {
                let dz = z[(1 + j) * block + q];
                let d2z = z[(1 + d + j) * block + q];
                let g1 = fb[(1 + j) * block + q];
                let g2 = fb[(1 + d + j) * block + q];
                acc += g1 * dz * sp + g2 * (spp * dz * dz + sp * d2z);
                zb[(1 + j) * block + q] = g1 * s + 2.0 * g2 * sp * dz;
                zb[(1 + d + j) * block + q] = g2 * s;
            }
        }
        zb[q] = acc;
    }
}

// g = v + f * diff (jet product).
fn mix_forward(f: &[f64], v: &[f64], diff: &[f64], g: &mut [f64], d: usize, ch: usize, block: usize) {
    for q in 0..block {
        let f0 = f[q];
        let d0 = diff[q];
        g[q] = v[q] + f0 * d0;
        if ch > 1 {
            for j in 0..d {
                let (a, b) = ((1 + j) * block + q, (1 + d + j) * block + q);
                g[a] = v[a] + f[a] * d0 + f0 * diff[a];
                g[b] = v[b] + f[b] * d0 + 2.0 * f[a] * diff[a] + f0 * diff[b];
            }
        }
    }
}

// Adjoint of `mix_forward`: writes fb, accumulates into ub and vb.
#[allow(clippy::too_many_arguments)]
fn mix_backward(
    gb: &[f64],
    f: &[f64],
    diff: &[f64],
    fb: &mut [f64],
    ub: &mut [f64],
    vb: &mut [f64],
    d: usize,
    ch: usize,
    block: usize,
) {
    for q in 0..block {
        let g0 = gb[q];
        let f0 = f[q];
        let d0 = diff[q];
        let mut fb0 = g0 * d0;
        let mut db0 = g0 * f0;
        if ch > 1 {
            for j in 0..d {
                let (a, b) = ((1 + j) * block + q, (1 + d + j) * block + q);
                let (g1, g2) = (gb[a], gb[b]);
                fb0 += g1 * diff[a] + g2 * diff[b];
                db0 += g1 * f[a] + g2 * f[b];
                fb[a] = g1 * d0 + 2.0 * g2 * diff[a];
                fb[b] = g2 * d0;
                let db1 = g1 * f0 + 2.0 * g2 * f[a];
                let db2 = g2 * f0;
                ub[a] += db1;
                ub[b] += db2;
                vb[a] += g1 - db1;
                vb[b] += g2 - db2;
            }
        }
        fb[q] = fb0;
        ub[q] += db0;
        vb[q] += g0 - db0;
    }
}

fn forward_chunk(
    arch: &Architecture,
    lay: &Layout,
    theta: &[f64],
    phi: &[f64],
    d: usize,
    ch: usize,
    p: usize,
    keep: bool,
) -> (Vec<f64>, Option<ChunkTape>) {
    let m = arch.input_dim;
    let r = arch.width;
    let rows = ch * p;
    let block = p * r;
    let mut out = vec![0.0; rows];
    if arch.depth == 0 {
        mul_xwt(rows, m, 1, phi, &theta[lay.w_out..], &mut out);
        for o in out[..p].iter_mut() {
            *o += theta[lay.b_out];
        }
        let tape = keep.then(|| ChunkTape {
            zu: Vec::new(),
            u: Vec::new(),
            zv: Vec::new(),
            v: Vec::new(),
            diff: Vec::new(),
            layers: Vec::new(),
        });
        return (out, tape);
    }

    let encode = |w: usize, b: usize| {
        let mut z = vec![0.0; rows * r];
        mul_xwt(rows, m, r, phi, &theta[w..w + r * m], &mut z);
        add_bias(&mut z, &theta[b..b + r], p);
        let mut a = vec![0.0; rows * r];
        tanh_forward(&z, &mut a, d, ch, block);
        (z, a)
    };
    let (zu, u) = encode(lay.w_u, lay.b_u);
    let (zv, v) = encode(lay.w_v, lay.b_v);
    let diff: Vec<f64> = u.iter().zip(&v).map(|(a, b)| a - b).collect();

    let mut layers: Vec<LayerTape> = Vec::with_capacity(arch.depth);
    let mut g_prev: Vec<f64> = Vec::new();
    for l in 0..arch.depth {
        let inp = if l == 0 { m } else { r };
        let x: &[f64] = match (l, keep) {
            (0, _) => phi,
            (_, true) => &layers[l - 1].g,
            (_, false) => &g_prev,
        };
        let mut z = vec![0.0; rows * r];
        mul_xwt(
            rows,
            inp,
            r,
            x,
            &theta[lay.w_hidden[l]..lay.w_hidden[l] + r * inp],
            &mut z,
        );
        add_bias(&mut z, &theta[lay.b_hidden[l]..lay.b_hidden[l] + r], p);
        let mut f = vec![0.0; rows * r];
        tanh_forward(&z, &mut f, d, ch, block);
        let mut g = vec![0.0; rows * r];
        mix_forward(&f, &v, &diff, &mut g, d, ch, block);
        if keep {
            layers.push(LayerTape { z, f, g });
        } else {
            g_prev = g;
        }
    }
    let g_last: &[f64] = if keep { &layers[arch.depth - 1].g } else { &g_prev };
    mul_xwt(rows, r, 1, g_last, &theta[lay.w_out..lay.w_out + r], &mut out);
    for o in out[..p].iter_mut() {
        *o += theta[lay.b_out];
    }
    let tape = keep.then_some(ChunkTape {
        zu,
        u,
        zv,
        v,
        diff,
        layers,
    });
    (out, tape)
}

#[allow(clippy::too_many_arguments)]
fn backward_chunk(
    arch: &Architecture,
    lay: &Layout,
    theta: &[f64],
    phi: &[f64],
    tape: &ChunkTape,
    ubar: &[f64],
    d: usize,
    ch: usize,
    p: usize,
) -> Vec<f64> {
    let m = arch.input_dim;
    let r = arch.width;
    let rows = ch * p;
    let block = p * r;
    let mut grad = vec![0.0; lay.total];
    grad[lay.b_out] = ubar[..p].iter().sum();
    if arch.depth == 0 {
        mul_ztx(rows, 1, m, ubar, phi, &mut grad[lay.w_out..lay.w_out + m]);
        return grad;
    }
    let k = arch.depth;
    mul_ztx(
        rows,
        1,
        r,
        ubar,
        &tape.layers[k - 1].g,
        &mut grad[lay.w_out..lay.w_out + r],
    );
    let mut gb = vec![0.0; rows * r];
    mul_zw(rows, 1, r, ubar, &theta[lay.w_out..lay.w_out + r], &mut gb);

    let mut ub = vec![0.0; rows * r];
    let mut vb = vec![0.0; rows * r];
    let mut fb = vec![0.0; rows * r];
    let mut zb = vec![0.0; rows * r];
    for l in (0..k).rev() {
        let lt = &tape.layers[l];
        mix_backward(&gb, &lt.f, &tape.diff, &mut fb, &mut ub, &mut vb, d, ch, block);
        tanh_backward(&lt.z, &lt.f, &fb, &mut zb, d, ch, block);
        let inp = if l == 0 { m } else { r };
        let x: &[f64] = if l == 0 { phi } else { &tape.layers[l - 1].g };
        let wl = lay.w_hidden[l];
        mul_ztx(rows, r, inp, &zb, x, &mut grad[wl..wl + r * inp]);
        let bl = lay.b_hidden[l];
        bias_grad(&zb, p, &mut grad[bl..bl + r]);
        if l > 0 {
            mul_zw(rows, r, r, &zb, &theta[wl..wl + r * r], &mut gb);
        }
    }
    for (w, b, act_bar, z, a) in [
        (lay.w_u, lay.b_u, &ub, &tape.zu, &tape.u),
        (lay.w_v, lay.b_v, &vb, &tape.zv, &tape.v),
    ] {
        tanh_backward(z, a, act_bar, &mut zb, d, ch, block);
        mul_ztx(rows, r, m, &zb, phi, &mut grad[w..w + r * m]);
        bias_grad(&zb, p, &mut grad[b..b + r]);
    }
    grad
}

fn to_point_major(out: &[f64], ch: usize, p: usize, dst: &mut [f64]) {
    for c in 0..ch {
        for i in 0..p {
            dst[i * ch + c] = out[c * p + i];
        }
    }
}

fn to_channel_major(src: &[f64], ch: usize, p: usize) -> Vec<f64> {
    let mut out = vec![0.0; ch * p];
    for c in 0..ch {
        for i in 0..p {
            out[c * p + i] = src[i * ch + c];
        }
    }
    out
}

/// Jets of the network output at every prepared point.
pub fn evaluate(params: &NetworkParams, prepared: &Prepared) -> JetField {
    run(params, prepared, false).0
}

/// Like [`evaluate`] but keeps the activations needed by [`backward`].
pub fn evaluate_taped(params: &NetworkParams, prepared: &Prepared) -> (JetField, Tape) {
    let (field, tape) = run(params, prepared, true);
    (field, tape.expect("tape requested"))
}

fn run(params: &NetworkParams, prepared: &Prepared, keep: bool) -> (JetField, Option<Tape>) {
    let arch = params.architecture();
    let lay = params.layout();
    assert_eq!(prepared.features, arch.input_dim, "feature dimension");
    let (d, ch) = (prepared.d, prepared.channels);
    let results: Vec<(Vec<f64>, Option<ChunkTape>)> = prepared
        .chunks
        .par_iter()
        .enumerate()
        .map(|(i, phi)| forward_chunk(arch, lay, params.values(), phi, d, ch, prepared.chunk_points(i), keep))
        .collect();
    let mut field = JetField::zeros(d, ch, prepared.len);
    let mut tapes = Vec::with_capacity(results.len());
    for (i, (out, tape)) in results.into_iter().enumerate() {
        let p = prepared.chunk_points(i);
        let start = i * CHUNK * ch;
        to_point_major(&out, ch, p, &mut field.data[start..start + p * ch]);
        if let Some(t) = tape {
            tapes.push(t);
        }
    }
    (field, keep.then_some(Tape { chunks: tapes }))
}

/// Gradient of `sum_p sum_c adjoint[p][c] * jet[p][c]` with respect to every
/// parameter (full layout, frozen entries included).
pub fn backward(params: &NetworkParams, prepared: &Prepared, tape: &Tape, adjoint: &JetField) -> Vec<f64> {
    let arch = params.architecture();
    let lay = params.layout();
    assert_eq!(adjoint.channels, prepared.channels, "adjoint channels");
    assert_eq!(adjoint.len(), prepared.len, "adjoint length");
    let (d, ch) = (prepared.d, prepared.channels);
    let grads: Vec<Vec<f64>> = prepared
        .chunks
        .par_iter()
        .zip(tape.chunks.par_iter())
        .enumerate()
        .map(|(i, (phi, t))| {
            let p = prepared.chunk_points(i);
            let start = i * CHUNK * ch;
            let ubar = to_channel_major(&adjoint.data[start..start + p * ch], ch, p);
            backward_chunk(arch, lay, params.values(), phi, t, &ubar, d, ch, p)
        })
        .collect();
    let mut total = vec![0.0; lay.total];
    for g in &grads {
        for (a, b) in total.iter_mut().zip(g) {
            *a += b;
        }
    }
    total
}
