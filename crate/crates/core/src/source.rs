//! Random-access image collections consumed by training and retrieval.

use crate::error::Result;
use crate::raster::Image;

/// An indexed, deterministic collection of images. Implementations decode
/// lazily; `load(i)` must return the same image every time.
pub trait ImageSource: Sync {
    fn len(&self) -> usize;

    fn load(&self, index: usize) -> Result<Image>;

    /// Human-readable identifier of entry `index` (a path or a name).
    fn label(&self, index: usize) -> String;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Images held in memory.
#[derive(Debug, Clone, Default)]
pub struct MemorySource {
    images: Vec<Image>,
    labels: Vec<String>,
}

impl MemorySource {
    pub fn new(images: Vec<Image>) -> Self {
        let labels = (0..images.len()).map(|i| format!("image-{i}")).collect();
        Self { images, labels }
    }

    pub fn with_labels(images: Vec<Image>, labels: Vec<String>) -> Self {
        assert_eq!(images.len(), labels.len());
        Self { images, labels }
    }

    pub fn push(&mut self, image: Image, label: impl Into<String>) {
        self.images.push(image);
        self.labels.push(label.into());
    }

    pub fn images(&self) -> &[Image] {
        &self.images
    }
}

impl ImageSource for MemorySource {
    fn len(&self) -> usize {
        self.images.len()
    }

    fn load(&self, index: usize) -> Result<Image> {
        Ok(self.images[index].clone())
    }

    fn label(&self, index: usize) -> String {
        self.labels[index].clone()
    }
}

/// A view of another source restricted to a subset of its indices.
pub struct SubsetSource<'a, S: ImageSource + ?Sized> {
    inner: &'a S,
    indices: Vec<usize>,
}

impl<'a, S: ImageSource + ?Sized> SubsetSource<'a, S> {
    pub fn new(inner: &'a S, indices: Vec<usize>) -> Self {
        Self { inner, indices }
    }

    /// Index into the underlying source of entry `i` of the subset.
    pub fn original_index(&self, i: usize) -> usize {
        self.indices[i]
    }
}

impl<S: ImageSource + ?Sized> ImageSource for SubsetSource<'_, S> {
    fn len(&self) -> usize {
        self.indices.len()
    }

    fn load(&self, index: usize) -> Result<Image> {
        self.inner.load(self.indices[index])
    }

    fn label(&self, index: usize) -> String {
        self.inner.label(self.indices[index])
    }
}
