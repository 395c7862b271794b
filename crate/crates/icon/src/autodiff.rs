//! Minimal reverse-mode automatic differentiation over dense `f64` arrays.
//!
//! A [`Tape`] records nodes in creation order (a Wengert list). Each node
//! holds its value, an accumulated gradient of the same shape, and a list of
//! parent edges with local-gradient closures. [`Tape::backward`] walks the
//! tape in reverse creation order exactly once, so gradient accumulation
//! order is fixed and runs are bit-reproducible.
//!
//! A tape is single-threaded; distinct tapes may live on distinct threads.

use crate::error::{Error, Result};

/// Probability clamp applied inside every log: operands are restricted to
/// `[PROB_EPS, 1 - PROB_EPS]` so one-hot outputs stay finite.
pub const PROB_EPS: f64 = 1e-7;

/// Shape of a node's value; the gradient always has the same shape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Shape {
    Scalar,
    Vector(usize),
    Matrix(usize, usize),
}

impl Shape {
    pub fn len(&self) -> usize {
        match *self {
            Shape::Scalar => 1,
            Shape::Vector(n) => n,
            Shape::Matrix(r, c) => r * c,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl std::fmt::Display for Shape {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match *self {
            Shape::Scalar => write!(f, "scalar"),
            Shape::Vector(n) => write!(f, "vector[{n}]"),
            Shape::Matrix(r, c) => write!(f, "matrix[{r}x{c}]"),
        }
    }
}

/// Handle to a node on a tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

/// Local-gradient closure: maps the child's accumulated gradient to this
/// parent's gradient contribution. Captures whatever forward values it needs.
type GradFn = Box<dyn Fn(&[f64]) -> Vec<f64> + Send>;

/// One node of the differentiation graph.
pub struct DiffValue {
    value: Vec<f64>,
    grad: Vec<f64>,
    shape: Shape,
    parents: Vec<(Var, GradFn)>,
}

/// Wengert list of [`DiffValue`] nodes in topological creation order.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<DiffValue>,
}

fn dim_err(op: &'static str, detail: String) -> Error {
    Error::Dimension { op, detail }
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Vec<f64>, shape: Shape, parents: Vec<(Var, GradFn)>) -> Var {
        debug_assert_eq!(value.len(), shape.len());
        let grad = vec![0.0; value.len()];
        self.nodes.push(DiffValue {
            value,
            grad,
            shape,
            parents,
        });
        Var(self.nodes.len() - 1)
    }

    // ----- leaves -------------------------------------------------------

    pub fn scalar(&mut self, v: f64) -> Var {
        self.push(vec![v], Shape::Scalar, Vec::new())
    }

    pub fn vector(&mut self, v: &[f64]) -> Var {
        self.push(v.to_vec(), Shape::Vector(v.len()), Vec::new())
    }

    /// Row-major matrix leaf; `data.len()` must equal `rows * cols`.
    pub fn matrix(&mut self, rows: usize, cols: usize, data: &[f64]) -> Result<Var> {
        if data.len() != rows * cols {
            return Err(dim_err(
                "matrix",
                format!("{} values for a {rows}x{cols} matrix", data.len()),
            ));
        }
        Ok(self.push(data.to_vec(), Shape::Matrix(rows, cols), Vec::new()))
    }

    pub fn leaf(&mut self, shape: Shape, data: Vec<f64>) -> Result<Var> {
        if data.len() != shape.len() {
            return Err(dim_err(
                "leaf",
                format!("{} values for shape {shape}", data.len()),
            ));
        }
        Ok(self.push(data, shape, Vec::new()))
    }

    // ----- accessors ----------------------------------------------------

    pub fn shape(&self, x: Var) -> Shape {
        self.nodes[x.0].shape
    }

    pub fn value(&self, x: Var) -> &[f64] {
        &self.nodes[x.0].value
    }

    pub fn scalar_value(&self, x: Var) -> Result<f64> {
        match self.nodes[x.0].shape {
            Shape::Scalar => Ok(self.nodes[x.0].value[0]),
            s => Err(dim_err("scalar_value", format!("node is {s}, not scalar"))),
        }
    }

    pub fn grad(&self, x: Var) -> &[f64] {
        &self.nodes[x.0].grad
    }

    // ----- elementwise ops ----------------------------------------------

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<Shape> {
        let (sa, sb) = (self.nodes[a.0].shape, self.nodes[b.0].shape);
        if sa != sb {
            return Err(dim_err(op, format!("left is {sa} but right is {sb}")));
        }
        Ok(sa)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let shape = self.same_shape("add", a, b)?;
        let value: Vec<f64> = self.nodes[a.0]
            .value
            .iter()
            .zip(&self.nodes[b.0].value)
            .map(|(x, y)| x + y)
            .collect();
        let pass = |g: &[f64]| g.to_vec();
        Ok(self.push(
            value,
            shape,
            vec![(a, Box::new(pass)), (b, Box::new(pass))],
        ))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let shape = self.same_shape("sub", a, b)?;
        let value: Vec<f64> = self.nodes[a.0]
            .value
            .iter()
            .zip(&self.nodes[b.0].value)
            .map(|(x, y)| x - y)
            .collect();
        Ok(self.push(
            value,
            shape,
            vec![
                (a, Box::new(|g: &[f64]| g.to_vec())),
                (b, Box::new(|g: &[f64]| g.iter().map(|v| -v).collect())),
            ],
        ))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let shape = self.same_shape("mul", a, b)?;
        let av = self.nodes[a.0].value.clone();
        let bv = self.nodes[b.0].value.clone();
        let value: Vec<f64> = av.iter().zip(&bv).map(|(x, y)| x * y).collect();
        let bv2 = bv.clone();
        let av2 = av.clone();
        Ok(self.push(
            value,
            shape,
            vec![
                (
                    a,
                    Box::new(move |g: &[f64]| g.iter().zip(&bv2).map(|(gi, y)| gi * y).collect()),
                ),
                (
                    b,
                    Box::new(move |g: &[f64]| g.iter().zip(&av2).map(|(gi, x)| gi * x).collect()),
                ),
            ],
        ))
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Var {
        let shape = self.nodes[a.0].shape;
        let value: Vec<f64> = self.nodes[a.0].value.iter().map(|x| k * x).collect();
        self.push(
            value,
            shape,
            vec![(
                a,
                Box::new(move |g: &[f64]| g.iter().map(|gi| k * gi).collect()),
            )],
        )
    }

    pub fn neg(&mut self, a: Var) -> Var {
        self.scale(a, -1.0)
    }

    pub fn square(&mut self, a: Var) -> Var {
        let shape = self.nodes[a.0].shape;
        let av = self.nodes[a.0].value.clone();
        let value: Vec<f64> = av.iter().map(|x| x * x).collect();
        self.push(
            value,
            shape,
            vec![(
                a,
                Box::new(move |g: &[f64]| {
                    g.iter().zip(&av).map(|(gi, x)| 2.0 * x * gi).collect()
                }),
            )],
        )
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let shape = self.nodes[a.0].shape;
        let value: Vec<f64> = self.nodes[a.0].value.iter().map(|x| x.tanh()).collect();
        let out = value.clone();
        self.push(
            value,
            shape,
            vec![(
                a,
                Box::new(move |g: &[f64]| {
                    g.iter().zip(&out).map(|(gi, y)| gi * (1.0 - y * y)).collect()
                }),
            )],
        )
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let shape = self.nodes[a.0].shape;
        let av = self.nodes[a.0].value.clone();
        let value: Vec<f64> = av.iter().map(|x| x.max(0.0)).collect();
        self.push(
            value,
            shape,
            vec![(
                a,
                Box::new(move |g: &[f64]| {
                    g.iter()
                        .zip(&av)
                        .map(|(gi, x)| if *x > 0.0 { *gi } else { 0.0 })
                        .collect()
                }),
            )],
        )
    }

    // ----- layer / loss primitives ---------------------------------------

    /// `W x + b` for a `(m, n)` weight matrix, length-`n` input and length-`m` bias.
    pub fn affine(&mut self, w: Var, x: Var, b: Var) -> Result<Var> {
        let (m, n) = match self.nodes[w.0].shape {
            Shape::Matrix(m, n) => (m, n),
            s => return Err(dim_err("affine", format!("weight is {s}, not a matrix"))),
        };
        match self.nodes[x.0].shape {
            Shape::Vector(len) if len == n => {}
            s => {
                return Err(dim_err(
                    "affine",
                    format!("input is {s} but weight is matrix[{m}x{n}]"),
                ))
            }
        }
        match self.nodes[b.0].shape {
            Shape::Vector(len) if len == m => {}
            s => {
                return Err(dim_err(
                    "affine",
                    format!("bias is {s} but weight is matrix[{m}x{n}]"),
                ))
            }
        }

        let wv = self.nodes[w.0].value.clone();
        let xv = self.nodes[x.0].value.clone();
        let mut value = self.nodes[b.0].value.clone();
        for i in 0..m {
            let row = &wv[i * n..(i + 1) * n];
            value[i] += row.iter().zip(&xv).map(|(wij, xj)| wij * xj).sum::<f64>();
        }

        let wv2 = wv.clone();
        Ok(self.push(
            value,
            Shape::Vector(m),
            vec![
                (
                    w,
                    Box::new(move |g: &[f64]| {
                        // d/dW = g xᵀ
                        let mut out = vec![0.0; m * n];
                        for i in 0..m {
                            for j in 0..n {
                                out[i * n + j] = g[i] * xv[j];
                            }
                        }
                        out
                    }),
                ),
                (
                    x,
                    Box::new(move |g: &[f64]| {
                        // d/dx = Wᵀ g
                        let mut out = vec![0.0; n];
                        for i in 0..m {
                            for j in 0..n {
                                out[j] += wv2[i * n + j] * g[i];
                            }
                        }
                        out
                    }),
                ),
                (b, Box::new(|g: &[f64]| g.to_vec())),
            ],
        ))
    }

    /// Numerically stabilized softmax over a vector: components are positive
    /// and sum to one for any finite input.
    pub fn softmax(&mut self, z: Var) -> Result<Var> {
        let n = match self.nodes[z.0].shape {
            Shape::Vector(n) => n,
            s => return Err(dim_err("softmax", format!("input is {s}, not a vector"))),
        };
        let zv = &self.nodes[z.0].value;
        let max = zv.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = zv.iter().map(|v| (v - max).exp()).collect();
        let total: f64 = exps.iter().sum();
        let value: Vec<f64> = exps.iter().map(|e| e / total).collect();
        let out = value.clone();
        Ok(self.push(
            value,
            Shape::Vector(n),
            vec![(
                z,
                Box::new(move |g: &[f64]| {
                    let inner: f64 = g.iter().zip(&out).map(|(gi, yi)| gi * yi).sum();
                    g.iter().zip(&out).map(|(gi, yi)| yi * (gi - inner)).collect()
                }),
            )],
        ))
    }

    /// Dot product of two equal-length vectors, yielding a scalar.
    pub fn dot(&mut self, a: Var, b: Var) -> Result<Var> {
        match (self.nodes[a.0].shape, self.nodes[b.0].shape) {
            (Shape::Vector(n), Shape::Vector(m)) if n == m => {}
            (sa, sb) => return Err(dim_err("dot", format!("left is {sa}, right is {sb}"))),
        }
        let av = self.nodes[a.0].value.clone();
        let bv = self.nodes[b.0].value.clone();
        let value = av.iter().zip(&bv).map(|(x, y)| x * y).sum::<f64>();
        let bv2 = bv.clone();
        let av2 = av.clone();
        Ok(self.push(
            vec![value],
            Shape::Scalar,
            vec![
                (
                    a,
                    Box::new(move |g: &[f64]| bv2.iter().map(|y| g[0] * y).collect()),
                ),
                (
                    b,
                    Box::new(move |g: &[f64]| av2.iter().map(|x| g[0] * x).collect()),
                ),
            ],
        ))
    }

    /// Extracts component `idx` of a vector as a scalar.
    pub fn select(&mut self, v: Var, idx: usize) -> Result<Var> {
        let n = match self.nodes[v.0].shape {
            Shape::Vector(n) => n,
            s => return Err(dim_err("select", format!("input is {s}, not a vector"))),
        };
        if idx >= n {
            return Err(dim_err(
                "select",
                format!("index {idx} out of range for vector[{n}]"),
            ));
        }
        let value = self.nodes[v.0].value[idx];
        Ok(self.push(
            vec![value],
            Shape::Scalar,
            vec![(
                v,
                Box::new(move |g: &[f64]| {
                    let mut out = vec![0.0; n];
                    out[idx] = g[0];
                    out
                }),
            )],
        ))
    }

    /// `ln` of a scalar probability, with the operand clamped to
    /// `[PROB_EPS, 1 - PROB_EPS]`. Outside the clamp range the derivative of
    /// the clamped function is zero.
    pub fn log_clamped(&mut self, p: Var) -> Result<Var> {
        let raw = self.scalar_value(p)?;
        let clamped = raw.clamp(PROB_EPS, 1.0 - PROB_EPS);
        Ok(self.push(
            vec![clamped.ln()],
            Shape::Scalar,
            vec![(
                p,
                Box::new(move |g: &[f64]| {
                    if (PROB_EPS..=1.0 - PROB_EPS).contains(&raw) {
                        vec![g[0] / clamped]
                    } else {
                        vec![0.0]
                    }
                }),
            )],
        ))
    }

    /// `1 - p` for a scalar.
    pub fn one_minus(&mut self, p: Var) -> Result<Var> {
        let v = self.scalar_value(p)?;
        Ok(self.push(
            vec![1.0 - v],
            Shape::Scalar,
            vec![(p, Box::new(|g: &[f64]| vec![-g[0]]))],
        ))
    }

    /// Mean of a non-empty list of scalars.
    pub fn mean(&mut self, xs: &[Var]) -> Result<Var> {
        if xs.is_empty() {
            return Err(dim_err("mean", "empty input".to_string()));
        }
        let n = xs.len() as f64;
        let mut total = 0.0;
        for &x in xs {
            total += self.scalar_value(x)?;
        }
        let parents: Vec<(Var, GradFn)> = xs
            .iter()
            .map(|&x| {
                let f: GradFn = Box::new(move |g: &[f64]| vec![g[0] / n]);
                (x, f)
            })
            .collect();
        Ok(self.push(vec![total / n], Shape::Scalar, parents))
    }

    // ----- backward -------------------------------------------------------

    /// Resets all gradients, seeds the scalar `root` with 1, and propagates
    /// in reverse creation order. After it returns, each leaf's gradient is
    /// the partial derivative of `root` with respect to that leaf.
    pub fn backward(&mut self, root: Var) -> Result<()> {
        if self.nodes[root.0].shape != Shape::Scalar {
            return Err(dim_err(
                "backward",
                format!("root is {}, not scalar", self.nodes[root.0].shape),
            ));
        }
        for node in &mut self.nodes {
            node.grad.fill(0.0);
        }
        self.nodes[root.0].grad[0] = 1.0;
        for i in (0..=root.0).rev() {
            if self.nodes[i].parents.is_empty() {
                continue;
            }
            let contributions: Vec<(usize, Vec<f64>)> = {
                let node = &self.nodes[i];
                node.parents
                    .iter()
                    .map(|(p, f)| (p.0, f(&node.grad)))
                    .collect()
            };
            for (parent, contribution) in contributions {
                let grad = &mut self.nodes[parent].grad;
                debug_assert_eq!(grad.len(), contribution.len());
                for (gi, ci) in grad.iter_mut().zip(&contribution) {
                    *gi += ci;
                }
            }
        }
        Ok(())
    }
}

/// A shaped parameter array for [`grad_check`].
#[derive(Debug, Clone, PartialEq)]
pub struct ParamArray {
    pub shape: Shape,
    pub data: Vec<f64>,
}

impl ParamArray {
    pub fn scalar(v: f64) -> Self {
        ParamArray {
            shape: Shape::Scalar,
            data: vec![v],
        }
    }

    pub fn vector(data: Vec<f64>) -> Self {
        ParamArray {
            shape: Shape::Vector(data.len()),
            data,
        }
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(dim_err(
                "ParamArray::matrix",
                format!("{} values for a {rows}x{cols} matrix", data.len()),
            ));
        }
        Ok(ParamArray {
            shape: Shape::Matrix(rows, cols),
            data,
        })
    }
}

fn forward_value<F>(build: &F, point: &[ParamArray]) -> Result<f64>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let leaves: Vec<Var> = point
        .iter()
        .map(|p| tape.leaf(p.shape, p.data.clone()))
        .collect::<Result<_>>()?;
    let root = build(&mut tape, &leaves)?;
    let out = tape.scalar_value(root)?;
    if !out.is_finite() {
        return Err(Error::Evaluation(format!(
            "grad_check: objective evaluated to non-finite value {out}"
        )));
    }
    Ok(out)
}

/// Compares reverse-mode gradients against central finite differences for a
/// scalar-valued graph builder, returning the maximum relative error over all
/// coordinates. Relative error uses denominator `max(|a|, |b|, 1e-8)`.
pub fn grad_check<F>(build: &F, point: &[ParamArray], eps: f64) -> Result<f64>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    if !(eps > 0.0 && eps <= 1e-2) {
        return Err(Error::Config(format!(
            "grad_check eps must be in (0, 1e-2], got {eps}"
        )));
    }

    let mut tape = Tape::new();
    let leaves: Vec<Var> = point
        .iter()
        .map(|p| tape.leaf(p.shape, p.data.clone()))
        .collect::<Result<_>>()?;
    let root = build(&mut tape, &leaves)?;
    let out = tape.scalar_value(root)?;
    if !out.is_finite() {
        return Err(Error::Evaluation(format!(
            "grad_check: objective evaluated to non-finite value {out}"
        )));
    }
    tape.backward(root)?;
    let analytic: Vec<Vec<f64>> = leaves.iter().map(|&v| tape.grad(v).to_vec()).collect();

    let mut worst = 0.0f64;
    let mut perturbed = point.to_vec();
    for (k, array) in point.iter().enumerate() {
        for idx in 0..array.data.len() {
            perturbed[k].data[idx] = array.data[idx] + eps;
            let up = forward_value(build, &perturbed)?;
            perturbed[k].data[idx] = array.data[idx] - eps;
            let down = forward_value(build, &perturbed)?;
            perturbed[k].data[idx] = array.data[idx];
            let numeric = (up - down) / (2.0 * eps);
            let a = analytic[k][idx];
            let denom = a.abs().max(numeric.abs()).max(1e-8);
            worst = worst.max((a - numeric).abs() / denom);
        }
    }
    Ok(worst)
}
