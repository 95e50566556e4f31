//! Forward and reverse passes of the two-stage network on a single
//! `9 × L` sequence.

use ndarray::linalg::general_mat_mul;
use ndarray::{concatenate, s, Array2, ArrayView1, ArrayView2, ArrayViewMut2, Axis};

use super::arch::{Activation, ConvLayer, RefinerModel, ResidualBlock};

fn weight_view<'a>(w: &'a [f64], l: &ConvLayer) -> ArrayView2<'a, f64> {
    ArrayView2::from_shape((l.c_out, l.c_in * l.kernel), &w[l.w_off..l.b_off]).expect("layout")
}

fn bias_view<'a>(w: &'a [f64], l: &ConvLayer) -> ArrayView1<'a, f64> {
    ArrayView1::from(&w[l.b_off..l.end()])
}

fn grad_views<'a>(g: &'a mut [f64], l: &ConvLayer) -> (ArrayViewMut2<'a, f64>, &'a mut [f64]) {
    let (w, b) = g[l.w_off..l.end()].split_at_mut(l.b_off - l.w_off);
    (
        ArrayViewMut2::from_shape((l.c_out, l.c_in * l.kernel), w).expect("layout"),
        b,
    )
}

/// Dilated, centred, zero-padded im2col: row `tap·c_in + i` holds channel
/// `i` shifted by `(tap − k/2)·dilation`.
fn im2col(x: &Array2<f64>, kernel: usize, dilation: usize) -> Array2<f64> {
    let (c_in, len) = x.dim();
    let half = (kernel / 2) as isize;
    let mut cols = Array2::zeros((kernel * c_in, len));
    for tap in 0..kernel {
        let shift = (tap as isize - half) * dilation as isize;
        let (dst, src) = if shift >= 0 {
            let s = (shift as usize).min(len);
            (0..len - s, s..len)
        } else {
            let s = ((-shift) as usize).min(len);
            (s..len, 0..len - s)
        };
        if dst.is_empty() {
            continue;
        }
        cols.slice_mut(s![tap * c_in..(tap + 1) * c_in, dst])
            .assign(&x.slice(s![.., src]));
    }
    cols
}

fn col2im(cols: &Array2<f64>, c_in: usize, kernel: usize, dilation: usize) -> Array2<f64> {
    let len = cols.ncols();
    let half = (kernel / 2) as isize;
    let mut dx = Array2::zeros((c_in, len));
    for tap in 0..kernel {
        let shift = (tap as isize - half) * dilation as isize;
        let (dst, src) = if shift >= 0 {
            let s = (shift as usize).min(len);
            (0..len - s, s..len)
        } else {
            let s = ((-shift) as usize).min(len);
            (s..len, 0..len - s)
        };
        if dst.is_empty() {
            continue;
        }
        let mut target = dx.slice_mut(s![.., src]);
        target += &cols.slice(s![tap * c_in..(tap + 1) * c_in, dst]);
    }
    dx
}

/// Applies one convolution; returns the output and the matrix the kernel
/// multiplied (needed for the weight gradient).
fn conv_forward(w: &[f64], l: &ConvLayer, x: &Array2<f64>) -> (Array2<f64>, Option<Array2<f64>>) {
    let cols = (l.kernel > 1).then(|| im2col(x, l.kernel, l.dilation));
    let input = cols.as_ref().unwrap_or(x);
    let mut y = weight_view(w, l).dot(input);
    y += &bias_view(w, l).insert_axis(Axis(1));
    (y, cols)
}

/// Accumulates weight/bias gradients and returns the input gradient.
fn conv_backward(
    w: &[f64],
    grad: &mut [f64],
    l: &ConvLayer,
    input: &Array2<f64>,
    cols: Option<&Array2<f64>>,
    dy: &Array2<f64>,
) -> Array2<f64> {
    let used = cols.unwrap_or(input);
    let (mut gw, gb) = grad_views(grad, l);
    general_mat_mul(1.0, dy, &used.t(), 1.0, &mut gw);
    for (g, row) in gb.iter_mut().zip(dy.rows()) {
        *g += row.sum();
    }
    let dcols = weight_view(w, l).t().dot(dy);
    if l.kernel > 1 {
        col2im(&dcols, l.c_in, l.kernel, l.dilation)
    } else {
        dcols
    }
}

fn activate(a: Activation, x: &Array2<f64>) -> Array2<f64> {
    match a {
        Activation::Relu => x.mapv(|v| v.max(0.0)),
        Activation::Tanh => x.mapv(f64::tanh),
    }
}

fn activation_backward(a: Activation, pre: &Array2<f64>, post: &Array2<f64>, dy: &Array2<f64>) -> Array2<f64> {
    match a {
        Activation::Relu => {
            let mut d = dy.clone();
            d.zip_mut_with(pre, |g, &p| {
                if p <= 0.0 {
                    *g = 0.0
                }
            });
            d
        }
        Activation::Tanh => {
            let mut d = dy.clone();
            d.zip_mut_with(post, |g, &y| *g *= 1.0 - y * y);
            d
        }
    }
}

#[derive(Debug, Clone)]
struct BlockTape {
    input: Array2<f64>,
    cols: Option<Array2<f64>>,
    pre: Array2<f64>,
    post: Array2<f64>,
}

fn run_blocks(
    model: &RefinerModel,
    blocks: &[ResidualBlock],
    mut h: Array2<f64>,
    mut tape: Option<&mut Vec<BlockTape>>,
) -> Array2<f64> {
    let w = &model.weights;
    let act = model.architecture.activation;
    for b in blocks {
        let (pre, cols) = conv_forward(w, &b.conv, &h);
        let post = activate(act, &pre);
        let (branch, _) = conv_forward(w, &b.pointwise, &post);
        let out = &h + &branch;
        if let Some(t) = tape.as_deref_mut() {
            t.push(BlockTape {
                input: std::mem::replace(&mut h, out),
                cols,
                pre,
                post,
            });
        } else {
            h = out;
        }
    }
    h
}

fn blocks_backward(
    model: &RefinerModel,
    grad: &mut [f64],
    blocks: &[ResidualBlock],
    tape: &[BlockTape],
    mut dh: Array2<f64>,
) -> Array2<f64> {
    let w = &model.weights;
    let act = model.architecture.activation;
    for (b, t) in blocks.iter().zip(tape).rev() {
        let dpost = conv_backward(w, grad, &b.pointwise, &t.post, None, &dh);
        let dpre = activation_backward(act, &t.pre, &t.post, &dpost);
        let dinput = conv_backward(w, grad, &b.conv, &t.input, t.cols.as_ref(), &dpre);
        dh += &dinput;
    }
    dh
}

#[derive(Debug, Clone, PartialEq)]
pub struct Stage1Output {
    pub n_hf: Array2<f64>,
    pub x1: Array2<f64>,
    pub features: Array2<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RefinerOutput {
    pub n_hf: Array2<f64>,
    pub x1: Array2<f64>,
    pub n_lf: Array2<f64>,
    pub x_star: Array2<f64>,
}

/// Everything the reverse pass needs from one forward pass.
#[derive(Debug, Clone)]
pub struct Tape {
    x: Array2<f64>,
    e1_blocks: Vec<BlockTape>,
    features: Array2<f64>,
    fused_input: Array2<f64>,
    e2_input: Array2<f64>,
    e2_blocks: Vec<BlockTape>,
    e2_out: Array2<f64>,
}

fn stage1_impl(x: &Array2<f64>, model: &RefinerModel, tape: Option<&mut Vec<BlockTape>>) -> Stage1Output {
    let l = model.architecture.layout();
    let w = &model.weights;
    let (h0, _) = conv_forward(w, &l.e1_input, x);
    let features = run_blocks(model, &l.e1_blocks, h0, tape);
    let (n_hf, _) = conv_forward(w, &l.e1_head, &features);
    let x1 = x - &n_hf;
    Stage1Output { n_hf, x1, features }
}

/// `n̂_hf = E1(X̃)`, `X̃¹ = X̃ − n̂_hf`, plus E1's last hidden activation.
pub fn stage1_forward(x: &Array2<f64>, model: &RefinerModel) -> Stage1Output {
    stage1_impl(x, model, None)
}

/// Channel concatenation `[X̃; X̃¹; features]`.
pub fn fuse_features(x: &Array2<f64>, x1: &Array2<f64>, features: &Array2<f64>) -> Array2<f64> {
    concatenate(Axis(0), &[x.view(), x1.view(), features.view()]).expect("equal lengths")
}

fn stage2_impl(
    fused: &Array2<f64>,
    x1: &Array2<f64>,
    model: &RefinerModel,
    tape: Option<(&mut Array2<f64>, &mut Vec<BlockTape>, &mut Array2<f64>)>,
) -> (Array2<f64>, Array2<f64>) {
    let l = model.architecture.layout();
    let w = &model.weights;
    let (h0, _) = conv_forward(w, &l.fusion, fused);
    let (h, n_lf) = match tape {
        Some((input, blocks, out)) => {
            *input = h0.clone();
            let h = run_blocks(model, &l.e2_blocks, h0, Some(blocks));
            let (n_lf, _) = conv_forward(w, &l.e2_head, &h);
            *out = h.clone();
            (h, n_lf)
        }
        None => {
            let h = run_blocks(model, &l.e2_blocks, h0, None);
            let (n_lf, _) = conv_forward(w, &l.e2_head, &h);
            (h, n_lf)
        }
    };
    drop(h);
    let x_star = x1 - &n_lf;
    (n_lf, x_star)
}

/// `n̂_lf = E2(F_fuse)` (fusion layer included), `X̃* = X̃¹ − n̂_lf`.
/// Returns `(n̂_lf, X̃*)`.
pub fn stage2_forward(fused: &Array2<f64>, x1: &Array2<f64>, model: &RefinerModel) -> (Array2<f64>, Array2<f64>) {
    stage2_impl(fused, x1, model, None)
}

pub fn forward(x: &Array2<f64>, model: &RefinerModel) -> RefinerOutput {
    let s1 = stage1_forward(x, model);
    let fused = fuse_features(x, &s1.x1, &s1.features);
    let (n_lf, x_star) = stage2_forward(&fused, &s1.x1, model);
    RefinerOutput {
        n_hf: s1.n_hf,
        x1: s1.x1,
        n_lf,
        x_star,
    }
}

pub fn forward_with_tape(x: &Array2<f64>, model: &RefinerModel) -> (RefinerOutput, Tape) {
    let mut e1_blocks = Vec::new();
    let s1 = stage1_impl(x, model, Some(&mut e1_blocks));
    let fused = fuse_features(x, &s1.x1, &s1.features);
    let mut e2_input = Array2::zeros((0, 0));
    let mut e2_blocks = Vec::new();
    let mut e2_out = Array2::zeros((0, 0));
    let (n_lf, x_star) = stage2_impl(
        &fused,
        &s1.x1,
        model,
        Some((&mut e2_input, &mut e2_blocks, &mut e2_out)),
    );
    let tape = Tape {
        x: x.clone(),
        e1_blocks,
        features: s1.features,
        fused_input: fused,
        e2_input,
        e2_blocks,
        e2_out,
    };
    let out = RefinerOutput {
        n_hf: s1.n_hf,
        x1: s1.x1,
        n_lf,
        x_star,
    };
    (out, tape)
}

/// Reverse pass. `d_star` and `d_x1` are the loss gradients with respect to
/// `X̃*` and `X̃¹`; returns the gradient over the flat weight vector.
pub fn backward(model: &RefinerModel, tape: &Tape, d_star: &Array2<f64>, d_x1: &Array2<f64>) -> Vec<f64> {
    let l = model.architecture.layout();
    let w = &model.weights;
    let n = model.architecture.in_channels;
    let mut grad = vec![0.0; w.len()];

    // X̃* = X̃¹ − n̂_lf
    let d_nlf = -d_star;
    let mut dx1_total = d_x1 + d_star;

    let dh2 = conv_backward(w, &mut grad, &l.e2_head, &tape.e2_out, None, &d_nlf);
    let dh2_in = blocks_backward(model, &mut grad, &l.e2_blocks, &tape.e2_blocks, dh2);
    debug_assert_eq!(dh2_in.dim(), tape.e2_input.dim());
    let dfused = conv_backward(w, &mut grad, &l.fusion, &tape.fused_input, None, &dh2_in);
    dx1_total += &dfused.slice(s![n..2 * n, ..]);
    let mut dfeat = dfused.slice(s![2 * n.., ..]).to_owned();

    // X̃¹ = X̃ − n̂_hf
    let d_nhf = -&dx1_total;
    dfeat += &conv_backward(w, &mut grad, &l.e1_head, &tape.features, None, &d_nhf);
    let dh0 = blocks_backward(model, &mut grad, &l.e1_blocks, &tape.e1_blocks, dfeat);
    conv_backward(w, &mut grad, &l.e1_input, &tape.x, None, &dh0);
    grad
}

#[cfg(test)]
mod tests {
    use super::super::arch::RefinerArchitecture;
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_input(c: usize, len: usize, seed: u64) -> Array2<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array2::from_shape_fn((c, len), |_| rng.random_range(-1.0..1.0))
    }

    /// Direct O(L·k) convolution with zero padding.
    fn direct_conv(w: &[f64], l: &ConvLayer, x: &Array2<f64>) -> Array2<f64> {
        let len = x.ncols() as isize;
        let half = (l.kernel / 2) as isize;
        Array2::from_shape_fn((l.c_out, x.ncols()), |(o, t)| {
            let mut acc = w[l.b_off + o];
            for tap in 0..l.kernel {
                let src = t as isize + (tap as isize - half) * l.dilation as isize;
                if src < 0 || src >= len {
                    continue;
                }
                for i in 0..l.c_in {
                    acc += w[l.w_off + o * l.c_in * l.kernel + tap * l.c_in + i] * x[[i, src as usize]];
                }
            }
            acc
        })
    }

    fn direct_stack(model: &RefinerModel, blocks: &[ResidualBlock], mut h: Array2<f64>) -> Array2<f64> {
        for b in blocks {
            let pre = direct_conv(&model.weights, &b.conv, &h);
            let post = pre.mapv(|v| v.max(0.0));
            h = &h + &direct_conv(&model.weights, &b.pointwise, &post);
        }
        h
    }

    fn assert_close(a: &Array2<f64>, b: &Array2<f64>) {
        assert_eq!(a.dim(), b.dim());
        let worst = a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
        assert!(worst < 1e-12, "max difference {worst}");
    }

    fn tiny() -> RefinerModel {
        RefinerModel::random(RefinerArchitecture::with_hidden(2), 5, 0.4).unwrap()
    }

    #[test]
    fn zero_model_passes_input_through() {
        let model = RefinerModel::zeros(RefinerArchitecture::with_hidden(8)).unwrap();
        let x = random_input(9, 40, 1);
        let out = forward(&x, &model);
        assert_eq!(out.x1, x);
        assert_eq!(out.x_star, x);
        assert!(out.n_hf.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn head_biases_give_constant_residuals() {
        let mut model = RefinerModel::zeros(RefinerArchitecture::with_hidden(4)).unwrap();
        let l = model.architecture.layout();
        for (i, b) in (l.e1_head.b_off..l.e1_head.end()).enumerate() {
            model.weights[b] = i as f64 * 0.1;
        }
        let x = random_input(9, 7, 2);
        let s1 = stage1_forward(&x, &model);
        for ((c, _), &v) in s1.n_hf.indexed_iter() {
            assert_eq!(v, c as f64 * 0.1);
        }
    }

    #[test]
    fn length_one_is_defined() {
        let out = forward(&random_input(9, 1, 3), &tiny());
        assert!(out.x_star.iter().all(|v| v.is_finite()));
        assert_eq!(out.x_star.dim(), (9, 1));
    }

    #[test]
    fn stages_match_direct_convolution() {
        let model = tiny();
        let l = model.architecture.layout();
        let x = random_input(9, 8, 4);

        let h0 = direct_conv(&model.weights, &l.e1_input, &x);
        let feat = direct_stack(&model, &l.e1_blocks, h0);
        let n_hf = direct_conv(&model.weights, &l.e1_head, &feat);
        let s1 = stage1_forward(&x, &model);
        assert_close(&s1.n_hf, &(n_hf));
        assert_close(&s1.features, &(feat));
        assert_close(&s1.x1, &(&x - &n_hf));

        // L = 8 is far shorter than the largest dilation window.
        let fused = fuse_features(&x, &s1.x1, &s1.features);
        let h = direct_conv(&model.weights, &l.fusion, &fused);
        let h = direct_stack(&model, &l.e2_blocks, h);
        let n_lf = direct_conv(&model.weights, &l.e2_head, &h);
        let (got_lf, x_star) = stage2_forward(&fused, &s1.x1, &model);
        assert_close(&got_lf, &(n_lf));
        assert_close(&x_star, &(&s1.x1 - &n_lf));
    }

    #[test]
    fn zero_stage2_leaves_stage1_output() {
        let mut model = tiny();
        let l = model.architecture.layout();
        for i in l.fusion.w_off..l.e2_head.end() {
            model.weights[i] = 0.0;
        }
        let x = random_input(9, 20, 6);
        let out = forward(&x, &model);
        assert_eq!(out.x_star, out.x1);
    }

    /// Linear functional of both outputs, so the finite difference of the
    /// network is checked in isolation from the loss.
    #[test]
    fn backward_matches_finite_differences_for_linear_readout() {
        let model = tiny();
        let x = random_input(9, 12, 7);
        let a = random_input(9, 12, 8);
        let b = random_input(9, 12, 9);
        let readout = |m: &RefinerModel| {
            let o = forward(&x, m);
            (&o.x_star * &a).sum() + (&o.x1 * &b).sum()
        };
        let (_, tape) = forward_with_tape(&x, &model);
        let grad = backward(&model, &tape, &a, &b);
        let h = 1e-5;
        for i in 0..model.weights.len() {
            let mut plus = model.clone();
            plus.weights[i] += h;
            let mut minus = model.clone();
            minus.weights[i] -= h;
            let fd = (readout(&plus) - readout(&minus)) / (2.0 * h);
            assert!((fd - grad[i]).abs() <= 1e-6 * (1.0 + fd.abs()), "param {i}: {fd} vs {}", grad[i]);
        }
    }

    fn shifted_window(z: &Array2<f64>, start: usize, len: usize) -> Array2<f64> {
        z.slice(s![.., start..start + len]).to_owned()
    }

    #[test]
    fn stage1_stack_is_shift_equivariant_in_the_interior() {
        let model = RefinerModel::random(RefinerArchitecture::with_hidden(4), 11, 0.3).unwrap();
        let len = 512;
        let z = random_input(9, len + 16, 12);
        let base = stage1_forward(&shifted_window(&z, 8, len), &model).n_hf;
        let reach = 31;
        for shift in -8isize..=8 {
            let moved = stage1_forward(&shifted_window(&z, (8 + shift) as usize, len), &model).n_hf;
            for t in reach + 8..len - reach - 8 {
                let u = (t as isize - shift) as usize;
                for c in 0..9 {
                    assert_abs_diff_eq!(moved[[c, u]], base[[c, t]], epsilon = 1e-12);
                }
            }
        }
    }

    #[test]
    fn stage2_stack_is_shift_equivariant_in_the_interior() {
        // Stage 2 sees 255 frames per side, so the interior only exists for
        // sequences longer than 2·255 + 2·8.
        let model = RefinerModel::random(RefinerArchitecture::with_hidden(3), 13, 0.3).unwrap();
        let len = 600;
        let c = 2 * 9 + 3;
        let z = random_input(c, len + 16, 14);
        let x1 = Array2::zeros((9, len));
        let base = stage2_forward(&shifted_window(&z, 8, len), &x1, &model).0;
        let reach = 255;
        for shift in [-8isize, -3, 1, 8] {
            let moved = stage2_forward(&shifted_window(&z, (8 + shift) as usize, len), &x1, &model).0;
            for t in reach + 8..len - reach - 8 {
                let u = (t as isize - shift) as usize;
                for ch in 0..9 {
                    assert_abs_diff_eq!(moved[[ch, u]], base[[ch, t]], epsilon = 1e-12);
                }
            }
        }
    }
}
