use std::collections::BTreeMap;
use std::fmt::Write as _;

use rand::Rng;

use super::matrix::Matrix;
use super::NumericsError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

/// A named parameter with its gradient and Adadelta accumulators.
#[derive(Clone, Debug)]
pub struct Param {
    pub name: String,
    pub value: Matrix,
    pub grad: Matrix,
    /// Running average of squared gradients.
    pub sq_grad: Matrix,
    /// Running average of squared updates.
    pub sq_delta: Matrix,
}

#[derive(Clone, Debug, Default)]
pub struct ParamStore {
    params: Vec<Param>,
    by_name: BTreeMap<String, ParamId>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: &str, value: Matrix) -> Result<ParamId, NumericsError> {
        if self.by_name.contains_key(name) {
            return Err(NumericsError::DuplicateParam(name.to_string()));
        }
        let (r, c) = value.shape();
        let id = ParamId(self.params.len());
        self.params.push(Param {
            name: name.to_string(),
            value,
            grad: Matrix::zeros(r, c),
            sq_grad: Matrix::zeros(r, c),
            sq_delta: Matrix::zeros(r, c),
        });
        self.by_name.insert(name.to_string(), id);
        Ok(id)
    }

    pub fn add_zeros(
        &mut self,
        name: &str,
        rows: usize,
        cols: usize,
    ) -> Result<ParamId, NumericsError> {
        self.add(name, Matrix::zeros(rows, cols))
    }

    /// Uniform in `±sqrt(6 / (fan_in + fan_out))`.
    pub fn add_xavier<R: Rng>(
        &mut self,
        name: &str,
        rows: usize,
        cols: usize,
        fan_in: usize,
        fan_out: usize,
        rng: &mut R,
    ) -> Result<ParamId, NumericsError> {
        let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let data = (0..rows * cols)
            .map(|_| rng.gen_range(-bound..=bound))
            .collect();
        self.add(name, Matrix::new(rows, cols, data)?)
    }

    /// Uniform in `±sqrt(6 / fan_in)`, for layers followed by a ReLU.
    pub fn add_he<R: Rng>(
        &mut self,
        name: &str,
        rows: usize,
        cols: usize,
        fan_in: usize,
        rng: &mut R,
    ) -> Result<ParamId, NumericsError> {
        let bound = (6.0 / fan_in as f64).sqrt();
        let data = (0..rows * cols)
            .map(|_| rng.gen_range(-bound..=bound))
            .collect();
        self.add(name, Matrix::new(rows, cols, data)?)
    }

    pub fn id(&self, name: &str) -> Result<ParamId, NumericsError> {
        self.by_name
            .get(name)
            .copied()
            .ok_or_else(|| NumericsError::MissingParam(name.to_string()))
    }

    pub fn get(&self, id: ParamId) -> &Param {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Param {
        &mut self.params[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Matrix {
        &self.params[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Matrix {
        &mut self.params[id.0].value
    }

    pub fn grad(&self, id: ParamId) -> &Matrix {
        &self.params[id.0].grad
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Param> {
        self.params.iter_mut()
    }

    pub fn element_count(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    pub fn zero_grads(&mut self) {
        for p in &mut self.params {
            p.grad.fill(0.0);
        }
    }

    pub fn scale_grads(&mut self, factor: f64) {
        for p in &mut self.params {
            p.grad.as_mut_slice().iter_mut().for_each(|g| *g *= factor);
        }
    }

    /// Text form: a `params <count>` header, then per parameter a
    /// `<name> <rows> <cols>` line followed by one line of values.
    /// Values use the shortest representation that reads back to the same
    /// bits.
    pub fn write_text(&self, out: &mut String) {
        let _ = writeln!(out, "params {}", self.params.len());
        for p in &self.params {
            let _ = writeln!(out, "{} {} {}", p.name, p.value.rows(), p.value.cols());
            let mut first = true;
            for v in p.value.as_slice() {
                if !first {
                    out.push(' ');
                }
                first = false;
                let _ = write!(out, "{v:?}");
            }
            out.push('\n');
        }
    }

    /// Reads the form written by [`ParamStore::write_text`] from a line
    /// iterator. Accumulators start at zero.
    pub fn read_text<'a, I>(lines: &mut I) -> Result<ParamStore, NumericsError>
    where
        I: Iterator<Item = &'a str>,
    {
        let bad = |m: &str| NumericsError::Checkpoint(m.to_string());
        let header = lines.next().ok_or_else(|| bad("missing params header"))?;
        let count: usize = header
            .strip_prefix("params ")
            .and_then(|n| n.trim().parse().ok())
            .ok_or_else(|| bad("bad params header"))?;
        let mut store = ParamStore::new();
        for _ in 0..count {
            let head = lines
                .next()
                .ok_or_else(|| bad("truncated parameter list"))?;
            let mut f = head.split_whitespace();
            let (Some(name), Some(r), Some(c), None) = (f.next(), f.next(), f.next(), f.next())
            else {
                return Err(bad(&format!("bad parameter header {head:?}")));
            };
            let rows: usize = r.parse().map_err(|_| bad("bad row count"))?;
            let cols: usize = c.parse().map_err(|_| bad("bad column count"))?;
            let values = lines.next().ok_or_else(|| bad("missing values"))?;
            let data = values
                .split_whitespace()
                .map(|v| v.parse::<f64>())
                .collect::<Result<Vec<_>, _>>()
                .map_err(|e| bad(&format!("{name}: {e}")))?;
            store.add(name, Matrix::new(rows, cols, data)?)?;
        }
        Ok(store)
    }
}
