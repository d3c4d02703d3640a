//! Reverse-mode differentiation over the tensor DAG.

use std::collections::{HashMap, HashSet};

use super::conv::{col2im_add, conv_geometry, im2col};
use super::ops::unary_dx;
use super::{
    broadcast_strides, contiguous_strides, numel, strided_gather, strided_scatter_add, BinKind,
    Op, ReduceKind, Tensor,
};
use crate::elem::Elem;
use crate::error::{Error, Result};

/// Gradients of `requires_grad` leaves, keyed by tensor id, produced by one
/// `backward` call. Intermediate gradients are freed as soon as consumed.
pub struct GradStore<E: Elem> {
    grads: HashMap<u64, Vec<E>>,
}

impl<E: Elem> std::fmt::Debug for GradStore<E> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "GradStore({} entries)", self.grads.len())
    }
}

impl<E: Elem> GradStore<E> {
    pub fn get(&self, t: &Tensor<E>) -> Option<&[E]> {
        self.grads.get(&t.id()).map(|v| v.as_slice())
    }

    pub fn take(&mut self, t: &Tensor<E>) -> Option<Vec<E>> {
        self.grads.remove(&t.id())
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }
}

fn op_inputs<E: Elem>(t: &Tensor<E>) -> Vec<Tensor<E>> {
    match t.op() {
        Op::Leaf => vec![],
        Op::Unary { x, .. }
        | Op::AvgPool { x, .. }
        | Op::BilinearUp { x }
        | Op::Reduce { x, .. }
        | Op::Broadcast { x }
        | Op::Reshape { x }
        | Op::Permute { x, .. }
        | Op::Slice { x, .. }
        | Op::CumsumExclusive { x } => vec![x.clone()],
        Op::Binary { a, b, .. } | Op::Matmul { a, b } => vec![a.clone(), b.clone()],
        Op::Conv2d { input, kernel, .. } => vec![input.clone(), kernel.clone()],
        Op::BilinearSample { src, coords } => vec![src.clone(), coords.clone()],
        Op::Concat { parts, .. } => parts.clone(),
        Op::FilmSin { u, gamma, beta } => vec![u.clone(), gamma.clone(), beta.clone()],
    }
}

/// Sum an out-shaped gradient down to `in_shape` (adjoint of broadcasting).
fn reduce_grad_to_shape<E: Elem>(g: Vec<E>, out_shape: &[usize], in_shape: &[usize]) -> Vec<E> {
    if out_shape == in_shape {
        return g;
    }
    let mut out = vec![E::ZERO; numel(in_shape)];
    let strides = broadcast_strides(in_shape, out_shape.len());
    strided_scatter_add(&g, out_shape, &strides, &mut out);
    out
}

/// Elementwise grads of a broadcast binary op, already reduced to each
/// input's shape. `fa`/`fb` map (a, b, g) to the respective local gradient.
fn binary_grads<E: Elem>(
    a: &Tensor<E>,
    b: &Tensor<E>,
    g: &[E],
    out_shape: &[usize],
    fa: impl Fn(E, E, E) -> E,
    fb: impl Fn(E, E, E) -> E,
    want_a: bool,
    want_b: bool,
) -> (Option<Vec<E>>, Option<Vec<E>>) {
    let nd = out_shape.len();
    let sa = broadcast_strides(a.shape(), nd);
    let sb = broadcast_strides(b.shape(), nd);
    let (ad, bd) = (a.data(), b.data());
    let total = numel(out_shape);
    let mut ga_out = if want_a { vec![E::ZERO; total] } else { vec![] };
    let mut gb_out = if want_b { vec![E::ZERO; total] } else { vec![] };
    if out_shape.is_empty() {
        if want_a {
            ga_out.push(fa(ad[0], bd[0], g[0]));
        }
        if want_b {
            gb_out.push(fb(ad[0], bd[0], g[0]));
        }
    } else {
        let inner = out_shape[nd - 1];
        let outer = total / inner.max(1);
        let (ia, ib) = (sa[nd - 1], sb[nd - 1]);
        let mut idx = vec![0usize; nd - 1];
        let mut o = 0usize;
        for _ in 0..outer {
            let mut ba = 0usize;
            let mut bb = 0usize;
            for (d, &i) in idx.iter().enumerate() {
                ba += i * sa[d];
                bb += i * sb[d];
            }
            for i in 0..inner {
                let av = ad[ba + i * ia];
                let bv = bd[bb + i * ib];
                let gv = g[o];
                if want_a {
                    ga_out[o] = fa(av, bv, gv);
                }
                if want_b {
                    gb_out[o] = fb(av, bv, gv);
                }
                o += 1;
            }
            for d in (0..idx.len()).rev() {
                idx[d] += 1;
                if idx[d] < out_shape[d] {
                    break;
                }
                idx[d] = 0;
            }
        }
    }
    (
        want_a.then(|| reduce_grad_to_shape(ga_out, out_shape, a.shape())),
        want_b.then(|| reduce_grad_to_shape(gb_out, out_shape, b.shape())),
    )
}

fn permute_data<E: Elem>(data: &[E], in_shape: &[usize], perm: &[usize]) -> Vec<E> {
    let out_shape: Vec<usize> = perm.iter().map(|&p| in_shape[p]).collect();
    let in_strides = contiguous_strides(in_shape);
    let moved: Vec<usize> = perm.iter().map(|&p| in_strides[p]).collect();
    strided_gather(data, &out_shape, &moved)
}

fn bilinear_taps(pos: f64, size: usize) -> (usize, usize, f64, bool) {
    let limit = (size - 1) as f64;
    let inside = (0.0..=limit).contains(&pos);
    let pc = pos.clamp(0.0, limit);
    let i0 = pc.floor() as usize;
    let i1 = (i0 + 1).min(size - 1);
    (i0, i1, pc - i0 as f64, inside)
}

impl<E: Elem> Tensor<E> {
    /// Backpropagate from this scalar; returns the gradient of every
    /// reachable `requires_grad` leaf. Erroring cases: non-scalar loss,
    /// non-finite loss, and a repeated backward on the same root.
    pub fn backward(&self) -> Result<GradStore<E>> {
        if self.numel() != 1 {
            return Err(Error::NonScalarLoss(self.shape().to_vec()));
        }
        let v = self.data()[0];
        if !v.is_finite() {
            return Err(Error::NonFiniteLoss(v.to_f64()));
        }
        if self.mark_backward_done() {
            return Err(Error::DoubleBackward);
        }
        let mut grads: HashMap<u64, Vec<E>> = HashMap::new();
        if !self.requires_grad() {
            return Ok(GradStore { grads });
        }

        // Reverse topological order via iterative post-order DFS.
        enum Step<E: Elem> {
            Enter(Tensor<E>),
            Exit(Tensor<E>),
        }
        let mut topo: Vec<Tensor<E>> = Vec::new();
        let mut visited: HashSet<u64> = HashSet::new();
        let mut stack = vec![Step::Enter(self.clone())];
        while let Some(step) = stack.pop() {
            match step {
                Step::Enter(t) => {
                    if !visited.insert(t.id()) {
                        continue;
                    }
                    stack.push(Step::Exit(t.clone()));
                    for input in op_inputs(&t) {
                        if input.requires_grad() && !visited.contains(&input.id()) {
                            stack.push(Step::Enter(input));
                        }
                    }
                }
                Step::Exit(t) => topo.push(t),
            }
        }

        grads.insert(self.id(), vec![E::ONE; 1]);
        for node in topo.iter().rev() {
            let g = match grads.remove(&node.id()) {
                Some(g) => g,
                None => continue, // pruned: no consumer contributed
            };
            if node.is_leaf() {
                grads.insert(node.id(), g); // keep leaf grads in the store
                continue;
            }
            backprop_node(node, &g, &mut grads)?;
        }
        Ok(GradStore { grads })
    }
}

fn accumulate<E: Elem>(grads: &mut HashMap<u64, Vec<E>>, t: &Tensor<E>, g: Vec<E>) {
    if !t.requires_grad() {
        return;
    }
    match grads.entry(t.id()) {
        std::collections::hash_map::Entry::Occupied(mut e) => {
            let acc = e.get_mut();
            for (a, b) in acc.iter_mut().zip(g.iter()) {
                *a += *b;
            }
        }
        std::collections::hash_map::Entry::Vacant(e) => {
            e.insert(g);
        }
    }
}

fn backprop_node<E: Elem>(
    node: &Tensor<E>,
    g: &[E],
    grads: &mut HashMap<u64, Vec<E>>,
) -> Result<()> {
    match node.op() {
        Op::Leaf => {}
        Op::Unary { kind, x } => {
            let (xd, yd) = (x.data(), node.data());
            let gx: Vec<E> = (0..g.len())
                .map(|i| g[i] * unary_dx(*kind, xd[i], yd[i]))
                .collect();
            accumulate(grads, x, gx);
        }
        Op::Binary { kind, a, b } => {
            let (want_a, want_b) = (a.requires_grad(), b.requires_grad());
            let (ga, gb) = match kind {
                BinKind::Add => binary_grads(a, b, g, node.shape(), |_, _, g| g, |_, _, g| g, want_a, want_b),
                BinKind::Sub => {
                    binary_grads(a, b, g, node.shape(), |_, _, g| g, |_, _, g| -g, want_a, want_b)
                }
                BinKind::Mul => binary_grads(
                    a,
                    b,
                    g,
                    node.shape(),
                    |_, bv, g| g * bv,
                    |av, _, g| g * av,
                    want_a,
                    want_b,
                ),
                BinKind::Div => binary_grads(
                    a,
                    b,
                    g,
                    node.shape(),
                    |_, bv, g| g / bv,
                    |av, bv, g| -g * av / (bv * bv),
                    want_a,
                    want_b,
                ),
                BinKind::Min => binary_grads(
                    a,
                    b,
                    g,
                    node.shape(),
                    |av, bv, g| if av <= bv { g } else { E::ZERO },
                    |av, bv, g| if av <= bv { E::ZERO } else { g },
                    want_a,
                    want_b,
                ),
                BinKind::Max => binary_grads(
                    a,
                    b,
                    g,
                    node.shape(),
                    |av, bv, g| if av >= bv { g } else { E::ZERO },
                    |av, bv, g| if av >= bv { E::ZERO } else { g },
                    want_a,
                    want_b,
                ),
            };
            if let Some(ga) = ga {
                accumulate(grads, a, ga);
            }
            if let Some(gb) = gb {
                accumulate(grads, b, gb);
            }
        }
        Op::Matmul { a, b } => {
            let (m, k) = (a.shape()[0], a.shape()[1]);
            let n = b.shape()[1];
            if a.requires_grad() {
                // dA = g . B^T
                let mut ga = vec![E::ZERO; m * k];
                unsafe {
                    E::gemm(
                        m,
                        n,
                        k,
                        E::ONE,
                        g.as_ptr(),
                        n as isize,
                        1,
                        b.data().as_ptr(),
                        1,
                        n as isize,
                        E::ZERO,
                        ga.as_mut_ptr(),
                        k as isize,
                        1,
                    );
                }
                accumulate(grads, a, ga);
            }
            if b.requires_grad() {
                // dB = A^T . g
                let mut gb = vec![E::ZERO; k * n];
                unsafe {
                    E::gemm(
                        k,
                        m,
                        n,
                        E::ONE,
                        a.data().as_ptr(),
                        1,
                        k as isize,
                        g.as_ptr(),
                        n as isize,
                        1,
                        E::ZERO,
                        gb.as_mut_ptr(),
                        n as isize,
                        1,
                    );
                }
                accumulate(grads, b, gb);
            }
        }
        Op::Conv2d {
            input,
            kernel,
            stride,
            padding,
        } => {
            let geom = conv_geometry(input, kernel, *stride, *padding)?;
            let cols = geom.ho * geom.wo;
            let krows = geom.c * geom.kh * geom.kw;
            let mut col = vec![E::ZERO; krows * cols];
            let mut gk = kernel
                .requires_grad()
                .then(|| vec![E::ZERO; kernel.numel()]);
            let mut gi = input.requires_grad().then(|| vec![E::ZERO; input.numel()]);
            let mut colgrad = vec![E::ZERO; krows * cols];
            let in_data = input.data();
            for bi in 0..geom.b {
                let g_b = &g[bi * geom.o * cols..(bi + 1) * geom.o * cols];
                if gk.is_some() || gi.is_some() {
                    im2col(
                        &in_data[bi * geom.c * geom.h * geom.w..(bi + 1) * geom.c * geom.h * geom.w],
                        geom.c,
                        geom.h,
                        geom.w,
                        geom.kh,
                        geom.kw,
                        *stride,
                        geom.pad_h,
                        geom.pad_w,
                        geom.ho,
                        geom.wo,
                        &mut col,
                    );
                }
                if let Some(gk) = gk.as_mut() {
                    // dK += g_b . col^T
                    unsafe {
                        E::gemm(
                            geom.o,
                            cols,
                            krows,
                            E::ONE,
                            g_b.as_ptr(),
                            cols as isize,
                            1,
                            col.as_ptr(),
                            1,
                            cols as isize,
                            E::ONE,
                            gk.as_mut_ptr(),
                            krows as isize,
                            1,
                        );
                    }
                }
                if let Some(gi) = gi.as_mut() {
                    // dcol = K^T . g_b, then scatter back
                    unsafe {
                        E::gemm(
                            krows,
                            geom.o,
                            cols,
                            E::ONE,
                            kernel.data().as_ptr(),
                            1,
                            krows as isize,
                            g_b.as_ptr(),
                            cols as isize,
                            1,
                            E::ZERO,
                            colgrad.as_mut_ptr(),
                            cols as isize,
                            1,
                        );
                    }
                    col2im_add(
                        &colgrad,
                        geom.c,
                        geom.h,
                        geom.w,
                        geom.kh,
                        geom.kw,
                        *stride,
                        geom.pad_h,
                        geom.pad_w,
                        geom.ho,
                        geom.wo,
                        &mut gi[bi * geom.c * geom.h * geom.w..(bi + 1) * geom.c * geom.h * geom.w],
                    );
                }
            }
            if let Some(gk) = gk {
                accumulate(grads, kernel, gk);
            }
            if let Some(gi) = gi {
                accumulate(grads, input, gi);
            }
        }
        Op::AvgPool { x, k } => {
            let s = x.shape();
            let (b, c, h, w) = (s[0], s[1], s[2], s[3]);
            let (ho, wo) = (h / k, w / k);
            let inv = E::ONE / E::from_f64((k * k) as f64);
            let mut gx = vec![E::ZERO; x.numel()];
            for bc in 0..b * c {
                let gsrc = &g[bc * ho * wo..(bc + 1) * ho * wo];
                let dst = &mut gx[bc * h * w..(bc + 1) * h * w];
                for oy in 0..ho {
                    for ox in 0..wo {
                        let gv = gsrc[oy * wo + ox] * inv;
                        for dy in 0..*k {
                            for dx in 0..*k {
                                dst[(oy * k + dy) * w + ox * k + dx] += gv;
                            }
                        }
                    }
                }
            }
            accumulate(grads, x, gx);
        }
        Op::BilinearUp { x } => {
            let s = x.shape();
            let (b, c, h, w) = (s[0], s[1], s[2], s[3]);
            let (ho, wo) = (2 * h, 2 * w);
            let mut gx = vec![E::ZERO; x.numel()];
            let ytaps: Vec<(usize, usize, f64, bool)> = (0..ho)
                .map(|i| bilinear_taps((i as f64 + 0.5) / 2.0 - 0.5, h))
                .collect();
            let xtaps: Vec<(usize, usize, f64, bool)> = (0..wo)
                .map(|i| bilinear_taps((i as f64 + 0.5) / 2.0 - 0.5, w))
                .collect();
            for bc in 0..b * c {
                let gsrc = &g[bc * ho * wo..(bc + 1) * ho * wo];
                let dst = &mut gx[bc * h * w..(bc + 1) * h * w];
                for (oy, &(y0, y1, fy, _)) in ytaps.iter().enumerate() {
                    let fy = E::from_f64(fy);
                    for (ox, &(x0, x1, fx, _)) in xtaps.iter().enumerate() {
                        let fx = E::from_f64(fx);
                        let gv = gsrc[oy * wo + ox];
                        dst[y0 * w + x0] += gv * (E::ONE - fy) * (E::ONE - fx);
                        dst[y0 * w + x1] += gv * (E::ONE - fy) * fx;
                        dst[y1 * w + x0] += gv * fy * (E::ONE - fx);
                        dst[y1 * w + x1] += gv * fy * fx;
                    }
                }
            }
            accumulate(grads, x, gx);
        }
        Op::BilinearSample { src, coords } => {
            let (batched, b, c, h, w) = match src.shape() {
                [c, h, w] => (false, 1usize, *c, *h, *w),
                [b, c, h, w] => (true, *b, *c, *h, *w),
                _ => unreachable!(),
            };
            let _ = batched;
            let hw_out = coords.numel() / (b * 2);
            let mut gsrc = src.requires_grad().then(|| vec![E::ZERO; src.numel()]);
            let mut gcoords = coords.requires_grad().then(|| vec![E::ZERO; coords.numel()]);
            let sdat = src.data();
            let cdat = coords.data();
            for bi in 0..b {
                let cbase = bi * hw_out * 2;
                for p in 0..hw_out {
                    let xr = cdat[cbase + p * 2].to_f64();
                    let yr = cdat[cbase + p * 2 + 1].to_f64();
                    let (x0, x1, fx, in_x) = bilinear_taps(xr, w);
                    let (y0, y1, fy, in_y) = bilinear_taps(yr, h);
                    let (fxe, fye) = (E::from_f64(fx), E::from_f64(fy));
                    let mut dx_acc = E::ZERO;
                    let mut dy_acc = E::ZERO;
                    for ch in 0..c {
                        let plane_base = (bi * c + ch) * h * w;
                        let gv = g[(bi * c + ch) * hw_out + p];
                        if let Some(gs) = gsrc.as_mut() {
                            gs[plane_base + y0 * w + x0] += gv * (E::ONE - fye) * (E::ONE - fxe);
                            gs[plane_base + y0 * w + x1] += gv * (E::ONE - fye) * fxe;
                            gs[plane_base + y1 * w + x0] += gv * fye * (E::ONE - fxe);
                            gs[plane_base + y1 * w + x1] += gv * fye * fxe;
                        }
                        if gcoords.is_some() {
                            let v00 = sdat[plane_base + y0 * w + x0];
                            let v01 = sdat[plane_base + y0 * w + x1];
                            let v10 = sdat[plane_base + y1 * w + x0];
                            let v11 = sdat[plane_base + y1 * w + x1];
                            if in_x {
                                let d = (v01 - v00) * (E::ONE - fye) + (v11 - v10) * fye;
                                dx_acc += gv * d;
                            }
                            if in_y {
                                let d = (v10 - v00) * (E::ONE - fxe) + (v11 - v01) * fxe;
                                dy_acc += gv * d;
                            }
                        }
                    }
                    if let Some(gc) = gcoords.as_mut() {
                        gc[cbase + p * 2] += dx_acc;
                        gc[cbase + p * 2 + 1] += dy_acc;
                    }
                }
            }
            if let Some(gs) = gsrc {
                accumulate(grads, src, gs);
            }
            if let Some(gc) = gcoords {
                accumulate(grads, coords, gc);
            }
        }
        Op::Reduce { kind, x, axes } => {
            let nd = x.shape().len();
            let reduced: Vec<bool> = (0..nd).map(|d| axes.contains(&d)).collect();
            let mut out_shape_kept: Vec<usize> = x.shape().to_vec();
            for &a in axes {
                out_shape_kept[a] = 1;
            }
            let out_strides = contiguous_strides(&out_shape_kept);
            let group: usize = axes.iter().map(|&a| x.shape()[a]).product();
            let mut gx = vec![E::ZERO; x.numel()];
            let xd = x.data();
            let outd = node.data();
            let mut assigned = vec![false; g.len()];
            let inv = E::ONE / E::from_f64(group as f64);
            let mut idx = vec![0usize; nd];
            let mut out_off = 0usize;
            for (i, gxi) in gx.iter_mut().enumerate() {
                match kind {
                    ReduceKind::Sum => *gxi = g[out_off],
                    ReduceKind::Mean => *gxi = g[out_off] * inv,
                    ReduceKind::Min | ReduceKind::Max => {
                        if !assigned[out_off] && xd[i] == outd[out_off] {
                            *gxi = g[out_off];
                            assigned[out_off] = true;
                        }
                    }
                }
                for d in (0..nd).rev() {
                    idx[d] += 1;
                    if !reduced[d] {
                        out_off += out_strides[d];
                    }
                    if idx[d] < x.shape()[d] {
                        break;
                    }
                    idx[d] = 0;
                    if !reduced[d] {
                        out_off -= out_strides[d] * x.shape()[d];
                    }
                }
            }
            accumulate(grads, x, gx);
        }
        Op::Broadcast { x } => {
            let gx = reduce_grad_to_shape(g.to_vec(), node.shape(), x.shape());
            accumulate(grads, x, gx);
        }
        Op::Reshape { x } => {
            accumulate(grads, x, g.to_vec());
        }
        Op::Permute { x, perm } => {
            let nd = perm.len();
            let mut inv = vec![0usize; nd];
            for (i, &p) in perm.iter().enumerate() {
                inv[p] = i;
            }
            let gx = permute_data(g, node.shape(), &inv);
            accumulate(grads, x, gx);
        }
        Op::Concat { parts, axis } => {
            let nd = parts[0].shape().len();
            let outer: usize = node.shape()[..*axis].iter().product();
            let inner: usize = node.shape()[*axis + 1..].iter().product();
            let total_rows = node.shape()[*axis];
            let _ = nd;
            let mut row_start = 0usize;
            for p in parts {
                let rows = p.shape()[*axis];
                if p.requires_grad() {
                    let mut gp = Vec::with_capacity(p.numel());
                    for o in 0..outer {
                        let base = (o * total_rows + row_start) * inner;
                        gp.extend_from_slice(&g[base..base + rows * inner]);
                    }
                    accumulate(grads, p, gp);
                }
                row_start += rows;
            }
        }
        Op::Slice { x, axis, start } => {
            let outer: usize = x.shape()[..*axis].iter().product();
            let inner: usize = x.shape()[*axis + 1..].iter().product();
            let rows_in = x.shape()[*axis];
            let rows_out = node.shape()[*axis];
            let mut gx = vec![E::ZERO; x.numel()];
            for o in 0..outer {
                let src = &g[o * rows_out * inner..(o + 1) * rows_out * inner];
                let dst_base = (o * rows_in + start) * inner;
                for (d, &s) in gx[dst_base..dst_base + rows_out * inner].iter_mut().zip(src) {
                    *d += s;
                }
            }
            accumulate(grads, x, gx);
        }
        Op::CumsumExclusive { x } => {
            let n = *x.shape().last().unwrap();
            let rows = x.numel() / n.max(1);
            let mut gx = vec![E::ZERO; x.numel()];
            for r in 0..rows {
                let base = r * n;
                let mut acc = E::ZERO;
                for i in (0..n).rev() {
                    gx[base + i] = acc;
                    acc += g[base + i];
                }
            }
            accumulate(grads, x, gx);
        }
        Op::FilmSin { u, gamma, beta } => {
            let nd = u.shape().len();
            let sg = broadcast_strides(gamma.shape(), nd);
            let sb = broadcast_strides(beta.shape(), nd);
            let inner = u.shape()[nd - 1];
            let outer = u.numel() / inner.max(1);
            let (ud, gd, bd) = (u.data(), gamma.data(), beta.data());
            let mut gu = u.requires_grad().then(|| vec![E::ZERO; u.numel()]);
            let mut ggamma = gamma.requires_grad().then(|| vec![E::ZERO; gamma.numel()]);
            let mut gbeta = beta.requires_grad().then(|| vec![E::ZERO; beta.numel()]);
            let mut idx = vec![0usize; nd - 1];
            let mut o = 0usize;
            for _ in 0..outer {
                let mut bg = 0usize;
                let mut bb = 0usize;
                for (d, &i) in idx.iter().enumerate() {
                    bg += i * sg[d];
                    bb += i * sb[d];
                }
                for i in 0..inner {
                    let gv = gd[bg + i * sg[nd - 1]];
                    let bv = bd[bb + i * sb[nd - 1]];
                    let uv = ud[o];
                    let c = (gv * uv + bv).cos() * g[o];
                    if let Some(gu) = gu.as_mut() {
                        gu[o] = c * gv;
                    }
                    if let Some(gg) = ggamma.as_mut() {
                        gg[bg + i * sg[nd - 1]] += c * uv;
                    }
                    if let Some(gb) = gbeta.as_mut() {
                        gb[bb + i * sb[nd - 1]] += c;
                    }
                    o += 1;
                }
                for d in (0..idx.len()).rev() {
                    idx[d] += 1;
                    if idx[d] < u.shape()[d] {
                        break;
                    }
                    idx[d] = 0;
                }
            }
            if let Some(gu) = gu {
                accumulate(grads, u, gu);
            }
            if let Some(gg) = ggamma {
                accumulate(grads, gamma, gg);
            }
            if let Some(gb) = gbeta {
                accumulate(grads, beta, gb);
            }
        }
    }
    Ok(())
}
