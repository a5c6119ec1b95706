use crate::autodiff::Tensor;
use crate::error::{Error, Result};

/// One labelled image with pixels in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub image: Tensor,
    pub label: usize,
}

impl Sample {
    pub fn new(image: Tensor, label: usize) -> Self {
        Self { image, label }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    samples: Vec<Sample>,
    num_classes: usize,
}

impl Dataset {
    /// Checks pixel range, label range and that all images share a shape.
    pub fn new(samples: Vec<Sample>, num_classes: usize) -> Result<Self> {
        if let Some(first) = samples.first() {
            for (i, s) in samples.iter().enumerate() {
                if s.image.shape() != first.image.shape() {
                    return Err(Error::ShapeMismatch {
                        op: "dataset",
                        lhs: first.image.shape().to_vec(),
                        rhs: s.image.shape().to_vec(),
                    });
                }
                if s.label >= num_classes {
                    return Err(Error::LabelOutOfRange { label: s.label, classes: num_classes });
                }
                if s.image.data().iter().any(|v| !(0.0..=1.0).contains(v)) {
                    return Err(Error::InvalidArgument(format!("sample {i} has pixels outside [0, 1]")));
                }
            }
        }
        Ok(Self { samples, num_classes })
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn image_shape(&self) -> Option<&[usize]> {
        self.samples.first().map(|s| s.image.shape())
    }

    pub fn get(&self, index: usize) -> Option<&Sample> {
        self.samples.get(index)
    }

    /// The listed samples, in order, as a new dataset.
    pub fn subset(&self, indices: &[usize]) -> Result<Dataset> {
        let samples = indices
            .iter()
            .map(|&i| {
                self.samples
                    .get(i)
                    .cloned()
                    .ok_or_else(|| Error::InvalidArgument(format!("sample index {i} out of range")))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Dataset { samples, num_classes: self.num_classes })
    }
}

/// Stacks samples into an `N x ...` image tensor and a label list.
pub fn stack_batch(batch: &[Sample]) -> Result<(Tensor, Vec<usize>)> {
    let images: Vec<Tensor> = batch.iter().map(|s| s.image.clone()).collect();
    let labels = batch.iter().map(|s| s.label).collect();
    Ok((Tensor::stack(&images)?, labels))
}
