//! Grid containers and the staggered difference/average operator calculus.
//!
//! The domain is the unit square, periodic in x and physical at y = 0 and
//! y = 1, discretized by an N x N uniform mesh with h = 1/N. Node fields
//! carry x-index i = 0..N-1 (wrapping) and y-index j = 0..N including both
//! wall rows. Edge fields live at half indices (i+1/2, j) or (i, j+1/2).
//!
//! Reductions run in a fixed serial order (j outer, i inner) with
//! compensated summation, so diagnostics are bit-reproducible.

use crate::{Error, Result};

/// Mesh description: N cells per direction, h = 1/N.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridParams {
    n: usize,
    h: f64,
}

impl GridParams {
    /// Build an N x N mesh. N must be even and at least 4 (the coarse/fine
    /// convergence harness halves N).
    pub fn new(n: usize) -> Result<Self> {
        if n < 4 || n % 2 != 0 {
            return Err(Error::Config(format!(
                "grid size must be even and >= 4, got {n}"
            )));
        }
        Ok(Self {
            n,
            h: 1.0 / n as f64,
        })
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn h(&self) -> f64 {
        self.h
    }

    /// Node weight w_j of the y-trapezoid rule: 1/2 on the wall rows.
    #[inline]
    pub fn weight(&self, j: usize) -> f64 {
        if j == 0 || j == self.n {
            0.5
        } else {
            1.0
        }
    }
}

/// Compensated (Neumaier) running sum; deterministic for a fixed add order.
#[derive(Debug, Clone, Copy, Default)]
pub(crate) struct CompensatedSum {
    s: f64,
    c: f64,
}

impl CompensatedSum {
    #[inline]
    pub fn add(&mut self, x: f64) {
        let t = self.s + x;
        if self.s.abs() >= x.abs() {
            self.c += (self.s - t) + x;
        } else {
            self.c += (x - t) + self.s;
        }
        self.s = t;
    }

    #[inline]
    pub fn value(&self) -> f64 {
        self.s + self.c
    }
}

#[inline]
fn wrap(i: isize, n: usize) -> usize {
    i.rem_euclid(n as isize) as usize
}

/// Node field on the physical rows j = 0..N, periodic in i.
#[derive(Debug, Clone, PartialEq)]
pub struct BulkField {
    n: usize,
    v: Vec<f64>,
}

impl BulkField {
    pub fn zeros(g: GridParams) -> Self {
        Self {
            n: g.n,
            v: vec![0.0; g.n * (g.n + 1)],
        }
    }

    pub fn constant(g: GridParams, c: f64) -> Self {
        Self {
            n: g.n,
            v: vec![c; g.n * (g.n + 1)],
        }
    }

    /// Fill from a function of node indices (i, j).
    pub fn from_fn(g: GridParams, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let n = g.n;
        let mut v = Vec::with_capacity(n * (n + 1));
        for j in 0..=n {
            for i in 0..n {
                v.push(f(i, j));
            }
        }
        Self { n, v }
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn idx(&self, i: usize, j: usize) -> usize {
        debug_assert!(i < self.n && j <= self.n);
        j * self.n + i
    }

    #[inline]
    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.v[self.idx(i, j)]
    }

    /// Periodic read: any integer i wraps into 0..N-1.
    #[inline]
    pub fn at_wrapped(&self, i: isize, j: usize) -> f64 {
        self.v[j * self.n + wrap(i, self.n)]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, x: f64) {
        let k = self.idx(i, j);
        self.v[k] = x;
    }

    #[inline]
    pub fn row(&self, j: usize) -> &[f64] {
        &self.v[j * self.n..(j + 1) * self.n]
    }

    #[inline]
    pub fn row_mut(&mut self, j: usize) -> &mut [f64] {
        &mut self.v[j * self.n..(j + 1) * self.n]
    }

    #[inline]
    pub fn values(&self) -> &[f64] {
        &self.v
    }

    #[inline]
    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.v
    }

    pub fn trace_bottom(&self) -> BoundaryField {
        BoundaryField {
            v: self.row(0).to_vec(),
        }
    }

    pub fn trace_top(&self) -> BoundaryField {
        BoundaryField {
            v: self.row(self.n).to_vec(),
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.v.iter().fold(0.0_f64, |m, x| m.max(x.abs()))
    }

    pub fn all_finite(&self) -> bool {
        self.v.iter().all(|x| x.is_finite())
    }

    /// Ghost extension by even reflection across both walls, which
    /// makes the centered wall-normal differences vanish there.
    pub fn extend_even_reflection(&self) -> BulkFieldGhost {
        let n = self.n;
        let mut g = BulkFieldGhost::zeros_n(n);
        for j in 0..=n {
            g.row_mut(j as isize).copy_from_slice(self.row(j));
        }
        let r1 = self.row(1).to_vec();
        g.row_mut(-1).copy_from_slice(&r1);
        let rn1 = self.row(n - 1).to_vec();
        g.row_mut(n as isize + 1).copy_from_slice(&rn1);
        g
    }

    /// Ghost extension with prescribed ghost rows at j = -1 and j = N+1.
    pub fn extend_with_ghosts(
        &self,
        bottom: &BoundaryField,
        top: &BoundaryField,
    ) -> BulkFieldGhost {
        assert_eq!(bottom.len(), self.n, "ghost row length");
        assert_eq!(top.len(), self.n, "ghost row length");
        let n = self.n;
        let mut g = BulkFieldGhost::zeros_n(n);
        for j in 0..=n {
            g.row_mut(j as isize).copy_from_slice(self.row(j));
        }
        g.row_mut(-1).copy_from_slice(bottom.values());
        g.row_mut(n as isize + 1).copy_from_slice(top.values());
        g
    }
}

/// Node field extended by one ghost row on each side: j = -1..N+1.
#[derive(Debug, Clone, PartialEq)]
pub struct BulkFieldGhost {
    n: usize,
    v: Vec<f64>,
}

impl BulkFieldGhost {
    fn zeros_n(n: usize) -> Self {
        Self {
            n,
            v: vec![0.0; n * (n + 3)],
        }
    }

    pub fn zeros(g: GridParams) -> Self {
        Self::zeros_n(g.n)
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn at(&self, i: usize, j: isize) -> f64 {
        debug_assert!(i < self.n && (-1..=self.n as isize + 1).contains(&j));
        self.v[(j + 1) as usize * self.n + i]
    }

    #[inline]
    pub fn at_wrapped(&self, i: isize, j: isize) -> f64 {
        self.v[(j + 1) as usize * self.n + wrap(i, self.n)]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: isize, x: f64) {
        self.v[(j + 1) as usize * self.n + i] = x;
    }

    #[inline]
    pub fn row(&self, j: isize) -> &[f64] {
        let r = (j + 1) as usize;
        &self.v[r * self.n..(r + 1) * self.n]
    }

    #[inline]
    pub fn row_mut(&mut self, j: isize) -> &mut [f64] {
        let r = (j + 1) as usize;
        &mut self.v[r * self.n..(r + 1) * self.n]
    }

    /// Drop the ghost rows.
    pub fn interior(&self) -> BulkField {
        let n = self.n;
        let mut f = BulkField {
            n,
            v: vec![0.0; n * (n + 1)],
        };
        for j in 0..=n {
            f.row_mut(j).copy_from_slice(self.row(j as isize));
        }
        f
    }
}

/// Face field at (i+1/2, j), i periodic, j = 0..N.
#[derive(Debug, Clone, PartialEq)]
pub struct EdgeFieldX {
    n: usize,
    v: Vec<f64>,
}

impl EdgeFieldX {
    pub fn zeros(g: GridParams) -> Self {
        Self {
            n: g.n,
            v: vec![0.0; g.n * (g.n + 1)],
        }
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.n
    }

    /// Value at (i+1/2, j).
    #[inline]
    pub fn at(&self, i: usize, j: usize) -> f64 {
        debug_assert!(i < self.n && j <= self.n);
        self.v[j * self.n + i]
    }

    #[inline]
    pub fn at_wrapped(&self, i: isize, j: usize) -> f64 {
        self.v[j * self.n + wrap(i, self.n)]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, x: f64) {
        self.v[j * self.n + i] = x;
    }
}

/// Face field at (i, j+1/2) for j = j_lo()..j_lo()+rows(); the extended
/// variant covers j = -1..N so that wall-row cell differences exist.
#[derive(Debug, Clone, PartialEq)]
pub struct EdgeFieldY {
    n: usize,
    j_lo: isize,
    rows: usize,
    v: Vec<f64>,
}

impl EdgeFieldY {
    /// Interior edges only: j = 0..N-1.
    pub fn zeros_core(g: GridParams) -> Self {
        Self {
            n: g.n,
            j_lo: 0,
            rows: g.n,
            v: vec![0.0; g.n * g.n],
        }
    }

    /// Extended range j = -1..N, one edge beyond each wall.
    pub fn zeros_extended(g: GridParams) -> Self {
        Self {
            n: g.n,
            j_lo: -1,
            rows: g.n + 2,
            v: vec![0.0; g.n * (g.n + 2)],
        }
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn j_lo(&self) -> isize {
        self.j_lo
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    fn slot(&self, i: usize, j: isize) -> usize {
        debug_assert!(i < self.n);
        debug_assert!(j >= self.j_lo && j < self.j_lo + self.rows as isize);
        (j - self.j_lo) as usize * self.n + i
    }

    /// Value at (i, j+1/2).
    #[inline]
    pub fn at(&self, i: usize, j: isize) -> f64 {
        self.v[self.slot(i, j)]
    }

    #[inline]
    pub fn at_wrapped(&self, i: isize, j: isize) -> f64 {
        self.v[(j - self.j_lo) as usize * self.n + wrap(i, self.n)]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: isize, x: f64) {
        let k = self.slot(i, j);
        self.v[k] = x;
    }

    fn covers(&self, j_lo: isize, j_hi: isize) -> bool {
        self.j_lo <= j_lo && j_hi < self.j_lo + self.rows as isize
    }
}

/// One-dimensional periodic field on a wall trace, i = 0..N-1.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundaryField {
    v: Vec<f64>,
}

impl BoundaryField {
    pub fn zeros(g: GridParams) -> Self {
        Self { v: vec![0.0; g.n] }
    }

    pub fn constant(g: GridParams, c: f64) -> Self {
        Self { v: vec![c; g.n] }
    }

    pub fn from_values(v: Vec<f64>) -> Self {
        Self { v }
    }

    pub fn from_fn(g: GridParams, mut f: impl FnMut(usize) -> f64) -> Self {
        Self {
            v: (0..g.n).map(|i| f(i)).collect(),
        }
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.v.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.v.is_empty()
    }

    #[inline]
    pub fn at(&self, i: usize) -> f64 {
        self.v[i]
    }

    #[inline]
    pub fn at_wrapped(&self, i: isize) -> f64 {
        self.v[wrap(i, self.v.len())]
    }

    #[inline]
    pub fn set(&mut self, i: usize, x: f64) {
        self.v[i] = x;
    }

    #[inline]
    pub fn values(&self) -> &[f64] {
        &self.v
    }

    #[inline]
    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.v
    }

    pub fn max_abs(&self) -> f64 {
        self.v.iter().fold(0.0_f64, |m, x| m.max(x.abs()))
    }

    /// Plain arithmetic mean, which equals the Gamma inner product with 1
    /// because |Gamma| = 1.
    pub fn mean(&self) -> f64 {
        let mut s = CompensatedSum::default();
        for &x in &self.v {
            s.add(x);
        }
        s.value() / self.v.len() as f64
    }
}

/// Face averages and differences in x: A_x f at (i+1/2, j) is the mean of
/// the two adjacent nodes, D_x f their difference over h.
pub fn face_ops_x(g: GridParams, f: &BulkField) -> (EdgeFieldX, EdgeFieldX) {
    assert_eq!(f.n(), g.n, "field/grid size");
    let n = g.n;
    let mut avg = EdgeFieldX::zeros(g);
    let mut dif = EdgeFieldX::zeros(g);
    for j in 0..=n {
        let row = f.row(j);
        for i in 0..n {
            let ip = if i + 1 == n { 0 } else { i + 1 };
            avg.set(i, j, 0.5 * (row[ip] + row[i]));
            dif.set(i, j, (row[ip] - row[i]) / g.h);
        }
    }
    (avg, dif)
}

/// Face averages and differences in y on the extended range j = -1..N,
/// consuming the ghost rows.
pub fn face_ops_y(g: GridParams, f: &BulkFieldGhost) -> (EdgeFieldY, EdgeFieldY) {
    assert_eq!(f.n(), g.n, "field/grid size");
    let n = g.n as isize;
    let mut avg = EdgeFieldY::zeros_extended(g);
    let mut dif = EdgeFieldY::zeros_extended(g);
    for j in -1..=n {
        let lo = f.row(j);
        let hi = f.row(j + 1);
        for i in 0..g.n {
            avg.set(i, j, 0.5 * (hi[i] + lo[i]));
            dif.set(i, j, (hi[i] - lo[i]) / g.h);
        }
    }
    (avg, dif)
}

/// Difference of D_y applied to physical rows only (j = 0..N-1); no ghost
/// data needed. This is the y-edge factor of the ghost-free gradient norm.
pub fn face_diff_y_core(g: GridParams, f: &BulkField) -> EdgeFieldY {
    assert_eq!(f.n(), g.n, "field/grid size");
    let mut dif = EdgeFieldY::zeros_core(g);
    for j in 0..g.n {
        let lo = f.row(j);
        let hi = f.row(j + 1);
        for i in 0..g.n {
            dif.set(i, j as isize, (hi[i] - lo[i]) / g.h);
        }
    }
    dif
}

/// Cell average and difference in x: a_x f and d_x f at nodes, from the two
/// adjacent x-faces.
pub fn cell_ops_x(g: GridParams, fe: &EdgeFieldX) -> (BulkField, BulkField) {
    assert_eq!(fe.n(), g.n, "field/grid size");
    let n = g.n;
    let mut avg = BulkField::zeros(g);
    let mut dif = BulkField::zeros(g);
    for j in 0..=n {
        for i in 0..n {
            let im = if i == 0 { n - 1 } else { i - 1 };
            let hi = fe.at(i, j);
            let lo = fe.at(im, j);
            avg.set(i, j, 0.5 * (hi + lo));
            dif.set(i, j, (hi - lo) / g.h);
        }
    }
    (avg, dif)
}

/// Cell average and difference in y at all physical rows j = 0..N. The
/// input must cover the extended edge range, otherwise the wall rows have
/// no lower/upper face and the operation is rejected.
pub fn cell_ops_y(g: GridParams, fe: &EdgeFieldY) -> Result<(BulkField, BulkField)> {
    assert_eq!(fe.n(), g.n, "field/grid size");
    if !fe.covers(-1, g.n as isize) {
        return Err(Error::Dimension(format!(
            "cell_ops_y needs y-edges on j = -1..N, got {}..{}",
            fe.j_lo(),
            fe.j_lo() + fe.rows() as isize - 1
        )));
    }
    let mut avg = BulkField::zeros(g);
    let mut dif = BulkField::zeros(g);
    for j in 0..=g.n {
        let js = j as isize;
        for i in 0..g.n {
            let hi = fe.at(i, js);
            let lo = fe.at(i, js - 1);
            avg.set(i, j, 0.5 * (hi + lo));
            dif.set(i, j, (hi - lo) / g.h);
        }
    }
    Ok((avg, dif))
}

/// Discrete divergence of g times a face vector field:
/// d_x(A_x g * f_x) + d_y(A_y g * f_y) at every physical node.
pub fn divergence(
    g: GridParams,
    coeff: &BulkFieldGhost,
    fx: &EdgeFieldX,
    fy: &EdgeFieldY,
) -> Result<BulkField> {
    assert_eq!(coeff.n(), g.n, "field/grid size");
    assert_eq!(fx.n(), g.n, "field/grid size");
    let (ax, _) = face_ops_x(g, &coeff.interior());
    let (ay, _) = face_ops_y(g, coeff);
    let mut px = EdgeFieldX::zeros(g);
    for j in 0..=g.n {
        for i in 0..g.n {
            px.set(i, j, ax.at(i, j) * fx.at(i, j));
        }
    }
    if !fy.covers(-1, g.n as isize) {
        return Err(Error::Dimension("divergence needs extended y-edges".into()));
    }
    let mut py = EdgeFieldY::zeros_extended(g);
    for j in -1..=g.n as isize {
        for i in 0..g.n {
            py.set(i, j, ay.at(i, j) * fy.at(i, j));
        }
    }
    let (_, dx) = cell_ops_x(g, &px);
    let (_, dy) = cell_ops_y(g, &py)?;
    let mut out = BulkField::zeros(g);
    for j in 0..=g.n {
        for i in 0..g.n {
            out.set(i, j, dx.at(i, j) + dy.at(i, j));
        }
    }
    Ok(out)
}

/// Five-point Laplacian on every physical row, consuming ghost rows at the
/// walls.
pub fn laplacian_5pt(g: GridParams, f: &BulkFieldGhost) -> BulkField {
    assert_eq!(f.n(), g.n, "field/grid size");
    let n = g.n;
    let h2 = g.h * g.h;
    let mut out = BulkField::zeros(g);
    for j in 0..=n {
        let js = j as isize;
        let mid = f.row(js);
        let lo = f.row(js - 1);
        let hi = f.row(js + 1);
        for i in 0..n {
            let ip = if i + 1 == n { 0 } else { i + 1 };
            let im = if i == 0 { n - 1 } else { i - 1 };
            out.set(
                i,
                j,
                (mid[ip] + mid[im] + hi[i] + lo[i] - 4.0 * mid[i]) / h2,
            );
        }
    }
    out
}

/// Periodic second difference along a wall trace.
pub fn laplacian_gamma(g: GridParams, f: &BoundaryField) -> BoundaryField {
    assert_eq!(f.len(), g.n, "field/grid size");
    let n = g.n;
    let h2 = g.h * g.h;
    let mut out = BoundaryField::zeros(g);
    for i in 0..n {
        let ip = if i + 1 == n { 0 } else { i + 1 };
        let im = if i == 0 { n - 1 } else { i - 1 };
        out.set(i, (f.at(ip) - 2.0 * f.at(i) + f.at(im)) / h2);
    }
    out
}

/// Which wall a trace quantity belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Bottom,
    Top,
}

/// Centered wall-normal difference from the ghost rows:
/// (f_{i,1} - f_{i,-1})/(2h) at the bottom, (f_{i,N+1} - f_{i,N-1})/(2h)
/// at the top.
pub fn boundary_normal_derivative(g: GridParams, f: &BulkFieldGhost, side: Side) -> BoundaryField {
    assert_eq!(f.n(), g.n, "field/grid size");
    let n = g.n as isize;
    let (hi, lo) = match side {
        Side::Bottom => (f.row(1), f.row(-1)),
        Side::Top => (f.row(n + 1), f.row(n - 1)),
    };
    let scale = 1.0 / (2.0 * g.h);
    BoundaryField {
        v: (0..g.n).map(|i| (hi[i] - lo[i]) * scale).collect(),
    }
}

/// Weighted bulk inner product: h^2 sum of w_j f g with half weights on the
/// wall rows; the weights sum to exactly the unit area.
///
/// Panics if the fields disagree in size.
pub fn inner_omega(g: GridParams, f: &BulkField, q: &BulkField) -> f64 {
    assert_eq!(f.n(), g.n, "field/grid size");
    assert_eq!(q.n(), g.n, "field/grid size");
    let h2 = g.h * g.h;
    let mut s = CompensatedSum::default();
    for j in 0..=g.n {
        let w = g.weight(j) * h2;
        let fr = f.row(j);
        let qr = q.row(j);
        for i in 0..g.n {
            s.add(w * fr[i] * qr[i]);
        }
    }
    s.value()
}

pub fn norm_omega(g: GridParams, f: &BulkField) -> f64 {
    inner_omega(g, f, f).max(0.0).sqrt()
}

/// Weighted integral of f over the unit square; equals the bulk mean.
pub fn integral_omega(g: GridParams, f: &BulkField) -> f64 {
    assert_eq!(f.n(), g.n, "field/grid size");
    let h2 = g.h * g.h;
    let mut s = CompensatedSum::default();
    for j in 0..=g.n {
        let w = g.weight(j) * h2;
        for x in f.row(j) {
            s.add(w * x);
        }
    }
    s.value()
}

/// Trace integral of f over a unit-length wall; equals the trace mean.
pub fn integral_gamma(g: GridParams, f: &BoundaryField) -> f64 {
    assert_eq!(f.len(), g.n, "field/grid size");
    let mut s = CompensatedSum::default();
    for &x in f.values() {
        s.add(x);
    }
    g.h * s.value()
}

/// Trace inner product: h times the plain dot product.
pub fn inner_gamma(g: GridParams, f: &BoundaryField, q: &BoundaryField) -> f64 {
    assert_eq!(f.len(), g.n, "field/grid size");
    assert_eq!(q.len(), g.n, "field/grid size");
    let mut s = CompensatedSum::default();
    for i in 0..g.n {
        s.add(f.at(i) * q.at(i));
    }
    g.h * s.value()
}

pub fn norm_gamma(g: GridParams, f: &BoundaryField) -> f64 {
    inner_gamma(g, f, f).max(0.0).sqrt()
}

/// x-edge bracket: the weighted bulk product of the cell average a_x(f g)
/// with 1 (trapezoid in y through w_j).
pub fn edge_inner_x(g: GridParams, f: &EdgeFieldX, q: &EdgeFieldX) -> f64 {
    assert_eq!(f.n(), g.n, "field/grid size");
    assert_eq!(q.n(), g.n, "field/grid size");
    let h2 = g.h * g.h;
    let mut s = CompensatedSum::default();
    for j in 0..=g.n {
        let w = g.weight(j) * h2;
        for i in 0..g.n {
            let im = if i == 0 { g.n - 1 } else { i - 1 };
            let prod = 0.5 * (f.at(i, j) * q.at(i, j) + f.at(im, j) * q.at(im, j));
            s.add(w * prod);
        }
    }
    s.value()
}

/// y-edge bracket: h^2 times the plain sum over interior edges j = 0..N-1,
/// with no trapezoid weights (the two brackets are intentionally not
/// symmetric in form).
pub fn edge_inner_y(g: GridParams, f: &EdgeFieldY, q: &EdgeFieldY) -> f64 {
    assert_eq!(f.n(), g.n, "field/grid size");
    assert_eq!(q.n(), g.n, "field/grid size");
    assert!(
        f.covers(0, g.n as isize - 1) && q.covers(0, g.n as isize - 1),
        "y-edge bracket needs edges on j = 0..N-1"
    );
    let h2 = g.h * g.h;
    let mut s = CompensatedSum::default();
    for j in 0..g.n as isize {
        for i in 0..g.n {
            s.add(f.at(i, j) * q.at(i, j));
        }
    }
    h2 * s.value()
}

/// Full edge inner product of two face vector fields.
pub fn edge_inner(
    g: GridParams,
    f: (&EdgeFieldX, &EdgeFieldY),
    q: (&EdgeFieldX, &EdgeFieldY),
) -> f64 {
    edge_inner_x(g, f.0, q.0) + edge_inner_y(g, f.1, q.1)
}

/// Squared gradient norm [D_x f, D_x f] + [D_y f, D_y f]; ghost-free since
/// the y-bracket only touches interior edges.
pub fn grad_norm_sq(g: GridParams, f: &BulkField) -> f64 {
    let (_, dx) = face_ops_x(g, f);
    let dy = face_diff_y_core(g, f);
    edge_inner_x(g, &dx, &dx) + edge_inner_y(g, &dy, &dy)
}

/// Squared trace gradient norm: the Gamma norm of D_x applied to a wall
/// field, edges at i+1/2.
pub fn gamma_grad_norm_sq(g: GridParams, f: &BoundaryField) -> f64 {
    assert_eq!(f.len(), g.n, "field/grid size");
    let mut s = CompensatedSum::default();
    for i in 0..g.n {
        let ip = if i + 1 == g.n { 0 } else { i + 1 };
        let d = (f.at(ip) - f.at(i)) / g.h;
        s.add(d * d);
    }
    g.h * s.value()
}
