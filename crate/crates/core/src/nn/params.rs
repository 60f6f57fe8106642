use crate::error::{check_dim, Error, Result};

/// A named block inside a [`ParamVector`].
#[derive(Clone, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct Segment {
    pub name: String,
    pub shape: Vec<usize>,
}

impl Segment {
    pub fn new(name: impl Into<String>, shape: &[usize]) -> Self {
        Self {
            name: name.into(),
            shape: shape.to_vec(),
        }
    }

    pub fn size(&self) -> usize {
        self.shape.iter().product()
    }
}

/// Flat parameter storage with a named segment layout.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamVector {
    values: Vec<f64>,
    layout: Vec<Segment>,
}

impl ParamVector {
    pub fn zeros(layout: Vec<Segment>) -> Self {
        let n = layout.iter().map(Segment::size).sum();
        Self {
            values: vec![0.0; n],
            layout,
        }
    }

    pub fn from_values(layout: Vec<Segment>, values: Vec<f64>) -> Result<Self> {
        let n: usize = layout.iter().map(Segment::size).sum();
        check_dim("parameter vector", n, values.len())?;
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("parameter vector"));
        }
        Ok(Self { values, layout })
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            values: vec![0.0; self.values.len()],
            layout: self.layout.clone(),
        }
    }

    /// Same layout, new values. Panics on a length mismatch.
    pub fn with_values(&self, values: Vec<f64>) -> Self {
        assert_eq!(values.len(), self.values.len(), "parameter length");
        Self {
            values,
            layout: self.layout.clone(),
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn layout(&self) -> &[Segment] {
        &self.layout
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    fn range_of(&self, name: &str) -> Option<std::ops::Range<usize>> {
        let mut off = 0;
        for seg in &self.layout {
            let n = seg.size();
            if seg.name == name {
                return Some(off..off + n);
            }
            off += n;
        }
        None
    }

    pub fn segment(&self, name: &str) -> Option<&[f64]> {
        self.range_of(name).map(|r| &self.values[r])
    }

    pub fn segment_mut(&mut self, name: &str) -> Option<&mut [f64]> {
        self.range_of(name).map(move |r| &mut self.values[r])
    }

    pub fn l2_distance(&self, other: &Self) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }
}
