use std::ops::Range;

use crate::error::{Error, Result};

/// A named contiguous region of a [`ParamStore`].
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Segment {
    pub name: String,
    pub offset: usize,
    pub shape: Vec<usize>,
}

impl Segment {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> Range<usize> {
        self.offset..self.offset + self.len()
    }
}

/// Flat storage for one group of trainable parameters and their gradients.
///
/// Segments are appended in order, so they are disjoint and tile
/// `[0, values.len())` by construction.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    values: Vec<f64>,
    grads: Vec<f64>,
    segments: Vec<Segment>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Appends a segment initialised to zero and returns its range.
    pub fn add_segment(&mut self, name: &str, shape: &[usize]) -> Result<Range<usize>> {
        if self.segments.iter().any(|s| s.name == name) {
            return Err(Error::Segment {
                name: name.to_string(),
                message: "duplicate segment name".into(),
            });
        }
        let seg = Segment {
            name: name.to_string(),
            offset: self.values.len(),
            shape: shape.to_vec(),
        };
        let range = seg.range();
        self.values.resize(range.end, 0.0);
        self.grads.resize(range.end, 0.0);
        self.segments.push(seg);
        Ok(range)
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

    pub fn grads(&self) -> &[f64] {
        &self.grads
    }

    pub fn grads_mut(&mut self) -> &mut [f64] {
        &mut self.grads
    }

    /// Simultaneous access for update rules that read gradients while writing values.
    pub fn split_mut(&mut self) -> (&mut [f64], &mut [f64]) {
        (&mut self.values, &mut self.grads)
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    pub fn segment(&self, name: &str) -> Option<&Segment> {
        self.segments.iter().find(|s| s.name == name)
    }

    pub fn segment_values(&self, name: &str) -> Option<&[f64]> {
        self.segment(name).map(|s| &self.values[s.range()])
    }

    pub fn segment_values_mut(&mut self, name: &str) -> Option<&mut [f64]> {
        let range = self.segment(name)?.range();
        Some(&mut self.values[range])
    }

    /// Name of the segment holding flat index `index`.
    pub fn segment_of(&self, index: usize) -> Option<&Segment> {
        self.segments.iter().find(|s| s.range().contains(&index))
    }

    pub fn zero_grads(&mut self) {
        self.grads.iter_mut().for_each(|g| *g = 0.0);
    }

    /// Adds `other` into the gradient buffer element-wise.
    pub fn accumulate_grads(&mut self, other: &[f64]) -> Result<()> {
        if other.len() != self.grads.len() {
            return Err(Error::Dimension(format!(
                "gradient buffer has {} entries, store has {}",
                other.len(),
                self.grads.len()
            )));
        }
        for (g, o) in self.grads.iter_mut().zip(other) {
            *g += o;
        }
        Ok(())
    }

    /// Same segment names and shapes, in the same order.
    pub fn same_layout(&self, other: &ParamStore) -> bool {
        self.segments == other.segments
    }

    /// Checks that `other` matches this layout, naming the first offending segment.
    pub fn check_layout(&self, other: &[Segment]) -> Result<()> {
        for seg in &self.segments {
            match other.iter().find(|s| s.name == seg.name) {
                None => {
                    return Err(Error::Segment {
                        name: seg.name.clone(),
                        message: "missing".into(),
                    })
                }
                Some(o) if o.shape != seg.shape => {
                    return Err(Error::Segment {
                        name: seg.name.clone(),
                        message: format!("shape {:?} does not match expected {:?}", o.shape, seg.shape),
                    })
                }
                _ => {}
            }
        }
        if let Some(extra) = other.iter().find(|o| self.segment(&o.name).is_none()) {
            return Err(Error::Segment {
                name: extra.name.clone(),
                message: "unexpected segment".into(),
            });
        }
        Ok(())
    }

    pub fn all_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}
