//! Attribute schema, labeled image sets, the synthetic face generator and
//! on-disk codecs.

mod labels;
mod ppm;
mod schema;
pub mod synth;

use std::path::Path;

use rand::seq::index::sample;

pub use labels::{labels_csv_bytes, load_labels_csv, parse_labels_csv, write_labels_csv, LabelRow};
pub use ppm::{decode_ppm, encode_ppm};
pub use schema::{default_schema, AttributeGroup, AttributeRef, AttributeSchema};
pub use synth::{generate_synthetic_dataset, SynthConfig};

use crate::error::{Error, Result};
use crate::io::write_atomic;
use crate::tensor::{rng, Tensor};

pub const LABELS_FILE: &str = "labels.csv";
pub const SCHEMA_FILE: &str = "schema.txt";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LabeledImage {
    /// `3×H×W`, values in `[0, 1]`.
    pub image: Tensor,
    /// Class index per schema group, `None` when unlabeled.
    pub labels: Vec<Option<usize>>,
}

impl LabeledImage {
    /// Attribute indices this image is labeled positive for.
    pub fn attributes(&self, schema: &AttributeSchema) -> Vec<usize> {
        self.labels
            .iter()
            .enumerate()
            .filter_map(|(g, l)| l.and_then(|c| schema.attribute_index(g, c)))
            .collect()
    }

    pub fn has_attribute(&self, schema: &AttributeSchema, attribute: usize) -> bool {
        let a = schema.attribute(attribute);
        self.labels[a.group] == Some(a.class)
    }
}

#[derive(Clone, Debug)]
pub struct Dataset {
    pub schema: AttributeSchema,
    pub images: Vec<LabeledImage>,
    pub split: Split,
}

impl Dataset {
    pub fn new(schema: AttributeSchema, images: Vec<LabeledImage>, split: Split) -> Result<Self> {
        let first = images
            .first()
            .ok_or_else(|| Error::InvalidArgument("dataset is empty".into()))?;
        let shape = first.image.shape().to_vec();
        if shape.len() != 3 || shape[0] != 3 {
            return Err(Error::Shape(format!("images must be 3×H×W, got {shape:?}")));
        }
        for (i, item) in images.iter().enumerate() {
            if item.image.shape() != shape.as_slice() {
                return Err(Error::Shape(format!(
                    "image {i} has shape {:?}, expected {shape:?}",
                    item.image.shape()
                )));
            }
            if item.image.data().iter().any(|v| !(0.0..=1.0).contains(v)) {
                return Err(Error::InvalidArgument(format!("image {i} has pixels outside [0, 1]")));
            }
            if item.labels.len() != schema.group_count() {
                return Err(Error::InvalidArgument(format!(
                    "image {i} has {} labels, schema has {} groups",
                    item.labels.len(),
                    schema.group_count()
                )));
            }
            for (g, label) in item.labels.iter().enumerate() {
                if let Some(c) = label {
                    if *c >= schema.groups()[g].labels.len() {
                        return Err(Error::InvalidArgument(format!(
                            "image {i}: class {c} out of range for group {}",
                            schema.groups()[g].name
                        )));
                    }
                }
            }
        }
        Ok(Dataset {
            schema,
            images,
            split,
        })
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn image_shape(&self) -> &[usize] {
        self.images[0].image.shape()
    }

    pub fn with_split(mut self, split: Split) -> Self {
        self.split = split;
        self
    }

    /// File name of image `index` inside a dataset directory.
    pub fn file_name(index: usize) -> String {
        format!("img{index:05}.ppm")
    }

    pub fn label_rows(&self) -> Vec<LabelRow> {
        self.images
            .iter()
            .enumerate()
            .map(|(i, item)| LabelRow {
                file: Self::file_name(i),
                labels: item.labels.clone(),
            })
            .collect()
    }

    /// Writes one PPM per image, the labels CSV and the schema file into
    /// `dir`, each atomically.
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        for (i, item) in self.images.iter().enumerate() {
            write_atomic(&dir.join(Self::file_name(i)), &encode_ppm(&item.image)?)?;
        }
        write_labels_csv(&dir.join(LABELS_FILE), &self.schema, &self.label_rows())?;
        write_atomic(&dir.join(SCHEMA_FILE), self.schema.to_text().as_bytes())
    }

    /// Reads a directory written by [`Dataset::save`] (or any PPMs + labels CSV
    /// + schema file laid out the same way).
    pub fn load(dir: &Path, split: Split) -> Result<Self> {
        let schema = AttributeSchema::parse_text(&std::fs::read_to_string(dir.join(SCHEMA_FILE))?)?;
        let rows = load_labels_csv(&dir.join(LABELS_FILE), &schema)?;
        let mut images = Vec::with_capacity(rows.len());
        for row in rows {
            let bytes = std::fs::read(dir.join(&row.file))?;
            images.push(LabeledImage {
                image: decode_ppm(&bytes)?,
                labels: row.labels,
            });
        }
        Dataset::new(schema, images, split)
    }
}

/// Pixel-wise, channel-wise mean over all images, as a running mean in dataset
/// order (`m += (x - m) / k`), which is exact when all images are identical.
pub fn compute_mean_image(dataset: &Dataset) -> Result<Tensor> {
    let first = dataset
        .images
        .first()
        .ok_or_else(|| Error::InvalidArgument("mean of an empty dataset".into()))?;
    let mut mean = Tensor::zeros(first.image.shape())?;
    for (k, item) in dataset.images.iter().enumerate() {
        let count = (k + 1) as f64;
        for (m, &x) in mean.data_mut().iter_mut().zip(item.image.data()) {
            *m += (x - *m) / count;
        }
    }
    Ok(mean)
}

/// Sampled positives for one attribute.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PositiveSet {
    pub attribute: usize,
    /// Sorted image indices.
    pub indices: Vec<usize>,
    /// How many positives the dataset holds for this attribute.
    pub available: usize,
    /// Fewer positives than requested were available.
    pub shortfall: bool,
}

impl PositiveSet {
    /// No positive example exists at all.
    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }
}

/// One set per attribute of `min(m, available)` positives drawn uniformly
/// without replacement. Attributes are sampled independently, in schema order,
/// from one seeded stream.
pub fn select_positive_sets(
    dataset: &Dataset,
    schema: &AttributeSchema,
    m: usize,
    seed: u64,
) -> Result<Vec<PositiveSet>> {
    if m < 2 {
        return Err(Error::InvalidArgument(format!("set size m must be >= 2, got {m}")));
    }
    let mut rng = rng(seed);
    let mut sets = Vec::with_capacity(schema.attribute_count());
    for attribute in 0..schema.attribute_count() {
        let positives: Vec<usize> = dataset
            .images
            .iter()
            .enumerate()
            .filter(|(_, item)| item.has_attribute(schema, attribute))
            .map(|(i, _)| i)
            .collect();
        let take = m.min(positives.len());
        let mut indices: Vec<usize> = if take == 0 {
            Vec::new()
        } else {
            sample(&mut rng, positives.len(), take)
                .into_iter()
                .map(|k| positives[k])
                .collect()
        };
        indices.sort_unstable();
        sets.push(PositiveSet {
            attribute,
            indices,
            available: positives.len(),
            shortfall: positives.len() < m,
        });
    }
    Ok(sets)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_dataset(images: Vec<Tensor>, labels: Vec<Vec<Option<usize>>>) -> Dataset {
        let items = images
            .into_iter()
            .zip(labels)
            .map(|(image, labels)| LabeledImage { image, labels })
            .collect();
        Dataset::new(default_schema(), items, Split::Train).unwrap()
    }

    fn all(c: usize) -> Vec<Option<usize>> {
        vec![Some(c); 6]
    }

    #[test]
    fn mean_of_single_and_pair() {
        let a = Tensor::randn(&[3, 4, 4], 0.5, 0.1, 1).unwrap().clamp(0.0, 1.0);
        let b = Tensor::randn(&[3, 4, 4], 0.5, 0.1, 2).unwrap().clamp(0.0, 1.0);
        let d = tiny_dataset(vec![a.clone()], vec![all(0)]);
        assert_eq!(compute_mean_image(&d).unwrap(), a);
        let d = tiny_dataset(vec![a.clone(), b.clone()], vec![all(0), all(1)]);
        let mean = compute_mean_image(&d).unwrap();
        for ((m, x), y) in mean.data().iter().zip(a.data()).zip(b.data()) {
            assert_eq!(*m, (x + y) / 2.0);
        }
    }

    #[test]
    fn mean_of_identical_images_is_exact() {
        let a = Tensor::randn(&[3, 5, 5], 0.5, 0.1, 3).unwrap().clamp(0.0, 1.0);
        let d = tiny_dataset(vec![a.clone(); 7], vec![all(0); 7]);
        assert_eq!(compute_mean_image(&d).unwrap(), a);
    }

    #[test]
    fn mean_matches_naive_accumulation() {
        let images: Vec<Tensor> = (0..100)
            .map(|s| Tensor::randn(&[3, 6, 6], 0.5, 0.2, s).unwrap().clamp(0.0, 1.0))
            .collect();
        let d = tiny_dataset(images.clone(), vec![all(0); 100]);
        let mean = compute_mean_image(&d).unwrap();
        for p in 0..3 * 36 {
            let mut acc = 0.0;
            for img in &images {
                acc += img.data()[p];
            }
            assert!((mean.data()[p] - acc / 100.0).abs() <= 1e-12);
        }
    }

    #[test]
    fn dataset_rejects_mixed_shapes() {
        let a = Tensor::zeros(&[3, 4, 4]).unwrap();
        let b = Tensor::zeros(&[3, 5, 5]).unwrap();
        let items = vec![
            LabeledImage { image: a, labels: all(0) },
            LabeledImage { image: b, labels: all(0) },
        ];
        assert!(Dataset::new(default_schema(), items, Split::Train).is_err());
        assert!(Dataset::new(default_schema(), vec![], Split::Train).is_err());
    }

    #[test]
    fn positive_sets_clamp_and_flag() {
        let img = Tensor::zeros(&[3, 4, 4]).unwrap();
        // hair: 5 blond, 3 black, 0 brown
        let mut labels = vec![vec![Some(1), None, None, None, None, None]; 5];
        labels.extend(vec![vec![Some(0), None, None, None, None, None]; 3]);
        let d = tiny_dataset(vec![img; 8], labels);
        let sets = select_positive_sets(&d, &d.schema, 10, 4).unwrap();
        assert_eq!(sets.len(), 13);
        assert_eq!(sets[1].indices, vec![0, 1, 2, 3, 4]);
        assert!(sets[1].shortfall);
        assert_eq!(sets[0].indices, vec![5, 6, 7]);
        assert!(sets[2].is_empty());
        assert_eq!(sets[2].available, 0);
        assert!(select_positive_sets(&d, &d.schema, 1, 4).is_err());
    }

    #[test]
    fn positive_sets_are_deterministic_and_valid() {
        let d = generate_synthetic_dataset(60, 9, &default_schema(), 16).unwrap();
        let a = select_positive_sets(&d, &d.schema, 2, 77).unwrap();
        let b = select_positive_sets(&d, &d.schema, 2, 77).unwrap();
        assert_eq!(a, b);
        let big = select_positive_sets(&d, &d.schema, 8, 3).unwrap();
        for set in &big {
            assert!(set.indices.len() <= 8);
            for &i in &set.indices {
                assert!(d.images[i].has_attribute(&d.schema, set.attribute));
            }
        }
    }
}
