//! One-based class labels.
//!
//! Labels are 1-based everywhere in this crate (a raw CIFAR label byte 9 maps
//! to class 10); `index()` gives the 0-based position for one-hot layouts.

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ClassLabel(usize);

impl ClassLabel {
    /// Builds a label from a 1-based class id, validated against the class count.
    pub fn new(one_based: usize, class_count: usize) -> Result<Self> {
        if one_based == 0 || one_based > class_count {
            return Err(Error::Label(format!(
                "class {one_based} outside [1..{class_count}]"
            )));
        }
        Ok(Self(one_based))
    }

    /// From a 0-based index.
    pub fn from_index(index: usize, class_count: usize) -> Result<Self> {
        Self::new(index + 1, class_count)
    }

    #[inline]
    pub fn one_based(self) -> usize {
        self.0
    }

    /// 0-based position, for one-hot encodings and logits indexing.
    #[inline]
    pub fn index(self) -> usize {
        self.0 - 1
    }
}

/// One-hot rows for a label sequence, as `f64` (kernel side).
pub fn one_hot_rows(labels: &[ClassLabel], class_count: usize) -> Vec<f64> {
    let mut data = vec![0.0f64; labels.len() * class_count];
    for (i, l) in labels.iter().enumerate() {
        data[i * class_count + l.index()] = 1.0;
    }
    data
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_based_bounds() {
        assert!(ClassLabel::new(0, 10).is_err());
        assert!(ClassLabel::new(11, 10).is_err());
        let l = ClassLabel::new(10, 10).unwrap();
        assert_eq!(l.index(), 9);
    }
}
