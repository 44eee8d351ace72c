use std::sync::Arc;

use crate::error::{FedFgError, Result};

/// A named, shaped block inside a [`ParamVector`].
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Segment {
    pub name: String,
    pub shape: Vec<usize>,
}

impl Segment {
    pub fn new(name: impl Into<String>, shape: Vec<usize>) -> Self {
        Self {
            name: name.into(),
            shape,
        }
    }

    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Ordered list of segments. Cheap to clone.
#[derive(Debug, Clone)]
pub struct Layout {
    segments: Arc<[Segment]>,
    total: usize,
}

impl PartialEq for Layout {
    fn eq(&self, other: &Self) -> bool {
        Arc::ptr_eq(&self.segments, &other.segments) || self.segments == other.segments
    }
}

impl Layout {
    pub fn new(segments: Vec<Segment>) -> Self {
        let total = segments.iter().map(Segment::len).sum();
        Self {
            segments: segments.into(),
            total,
        }
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    pub fn total_len(&self) -> usize {
        self.total
    }

    /// Offset and length of the named segment.
    pub fn locate(&self, name: &str) -> Option<(usize, usize)> {
        let mut offset = 0;
        for seg in self.segments.iter() {
            if seg.name == name {
                return Some((offset, seg.len()));
            }
            offset += seg.len();
        }
        None
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.segments.iter().map(|s| s.name.as_str())
    }
}

/// Flat parameter vector with layout metadata. The unit of upload, download
/// and aggregation.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamVector {
    values: Vec<f64>,
    layout: Layout,
}

impl ParamVector {
    pub fn new(layout: Layout, values: Vec<f64>) -> Result<Self> {
        if values.len() != layout.total_len() {
            return Err(FedFgError::DimensionMismatch {
                context: "ParamVector::new",
                expected: layout.total_len(),
                got: values.len(),
            });
        }
        Ok(Self { values, layout })
    }

    pub fn zeros(layout: Layout) -> Self {
        let values = vec![0.0; layout.total_len()];
        Self { values, layout }
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

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn segment(&self, name: &str) -> Option<&[f64]> {
        self.layout
            .locate(name)
            .map(|(off, len)| &self.values[off..off + len])
    }

    pub fn segment_mut(&mut self, name: &str) -> Option<&mut [f64]> {
        self.layout
            .locate(name)
            .map(|(off, len)| &mut self.values[off..off + len])
    }

    /// Split into per-segment owned blocks.
    pub fn unflatten(&self) -> Vec<(Segment, Vec<f64>)> {
        let mut offset = 0;
        self.layout
            .segments()
            .iter()
            .map(|seg| {
                let block = self.values[offset..offset + seg.len()].to_vec();
                offset += seg.len();
                (seg.clone(), block)
            })
            .collect()
    }

    /// Inverse of [`unflatten`](Self::unflatten).
    pub fn flatten(blocks: Vec<(Segment, Vec<f64>)>) -> Result<Self> {
        let mut values = Vec::new();
        let mut segments = Vec::with_capacity(blocks.len());
        for (seg, block) in blocks {
            if block.len() != seg.len() {
                return Err(FedFgError::DimensionMismatch {
                    context: "ParamVector::flatten",
                    expected: seg.len(),
                    got: block.len(),
                });
            }
            values.extend_from_slice(&block);
            segments.push(seg);
        }
        Self::new(Layout::new(segments), values)
    }

    pub fn ensure_same_layout(&self, other: &ParamVector, context: &'static str) -> Result<()> {
        if self.layout == other.layout {
            Ok(())
        } else {
            Err(FedFgError::LayoutMismatch(context))
        }
    }

    /// `self += alpha * other`.
    pub fn axpy(&mut self, alpha: f64, other: &ParamVector) -> Result<()> {
        self.ensure_same_layout(other, "axpy")?;
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            *a += alpha * b;
        }
        Ok(())
    }

    pub fn scale(&mut self, factor: f64) {
        self.values.iter_mut().for_each(|v| *v *= factor);
    }

    /// `self - other`.
    pub fn sub(&self, other: &ParamVector) -> Result<ParamVector> {
        let mut out = self.clone();
        out.axpy(-1.0, other)?;
        Ok(out)
    }

    pub fn dot(&self, other: &ParamVector) -> Result<f64> {
        self.ensure_same_layout(other, "dot")?;
        Ok(self.values.iter().zip(&other.values).map(|(a, b)| a * b).sum())
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}

/// One SGD step: returns `params - eta * grad`, leaving the input untouched.
pub fn sgd_step(params: &ParamVector, grad: &ParamVector, eta: f64) -> Result<ParamVector> {
    if !(eta > 0.0) {
        return Err(FedFgError::invalid(format!("learning rate must be > 0, got {eta}")));
    }
    let mut out = params.clone();
    out.axpy(-eta, grad)?;
    Ok(out)
}
