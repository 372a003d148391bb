//! Image-level category co-occurrence counts.

use std::collections::BTreeSet;

use thiserror::Error;

use crate::coco::{CategoryId, Dataset, ImageId};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum CooccurError {
    #[error("unknown category {0}")]
    UnknownCategory(CategoryId),
    #[error("category {0} appears in no image; conditional presence is undefined")]
    Undefined(CategoryId),
}

/// Symmetric matrix: entry `(i, j)` is the number of images containing both
/// categories, the diagonal the number of images containing category `i`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CooccurrenceMatrix {
    category_ids: Vec<CategoryId>,
    names: Vec<String>,
    counts: Vec<u64>,
}

impl CooccurrenceMatrix {
    pub fn category_ids(&self) -> &[CategoryId] {
        &self.category_ids
    }

    fn position(&self, id: CategoryId) -> Result<usize, CooccurError> {
        self.category_ids
            .binary_search(&id)
            .map_err(|_| CooccurError::UnknownCategory(id))
    }

    pub fn count(&self, a: CategoryId, b: CategoryId) -> Result<u64, CooccurError> {
        let n = self.category_ids.len();
        Ok(self.counts[self.position(a)? * n + self.position(b)?])
    }

    /// CSV: a header row of category names, then the square count matrix.
    pub fn to_csv(&self) -> String {
        let n = self.category_ids.len();
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(&self.names).expect("in-memory write");
        for row in self.counts.chunks(n.max(1)).take(n) {
            w.write_record(row.iter().map(u64::to_string)).expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("csv is utf-8")
    }
}

/// Counts category presence per image. Crowd annotations count as presence.
pub fn cooccurrence_matrix(dataset: &Dataset) -> CooccurrenceMatrix {
    let category_ids = dataset.category_ids();
    let n = category_ids.len();
    let names = category_ids
        .iter()
        .map(|&id| dataset.category(id).map(|c| c.name.clone()).unwrap_or_default())
        .collect();
    let mut present: std::collections::BTreeMap<ImageId, BTreeSet<usize>> = Default::default();
    for ann in dataset.annotations() {
        let pos = category_ids.binary_search(&ann.category_id).expect("dataset integrity");
        present.entry(ann.image_id).or_default().insert(pos);
    }
    let mut counts = vec![0u64; n * n];
    for cats in present.values() {
        for &i in cats {
            for &j in cats {
                counts[i * n + j] += 1;
            }
        }
    }
    CooccurrenceMatrix { category_ids, names, counts }
}

/// P(b present | a present) = counts(a, b) / counts(a, a).
pub fn conditional_presence(matrix: &CooccurrenceMatrix, a: CategoryId, b: CategoryId) -> Result<f64, CooccurError> {
    let denom = matrix.count(a, a)?;
    if denom == 0 {
        return Err(CooccurError::Undefined(a));
    }
    Ok(matrix.count(a, b)? as f64 / denom as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coco::{Annotation, BBox, Category, ImageInfo, Segmentation};
    use proptest::prelude::*;

    fn ann(id: u64, image_id: u64, category_id: u64) -> Annotation {
        Annotation {
            id,
            image_id,
            category_id,
            bbox: BBox::new(0., 0., 1., 1.),
            area: 1.0,
            segmentation: Segmentation::Polygons(vec![]),
            iscrowd: false,
        }
    }

    fn dataset(anns: Vec<Annotation>, n_images: u64) -> Dataset {
        let images = (1..=n_images)
            .map(|id| ImageInfo { id, width: 4, height: 4, file_name: format!("{id}.png") })
            .collect();
        let cats = vec![
            Category { id: 1, name: "A".into(), supercategory: String::new() },
            Category { id: 2, name: "B".into(), supercategory: String::new() },
            Category { id: 3, name: "C".into(), supercategory: String::new() },
        ];
        Dataset::new(images, anns, cats).unwrap()
    }

    #[test]
    fn hand_enumeration() {
        // image 1 {A, B}, image 2 {A, A}
        let ds = dataset(vec![ann(1, 1, 1), ann(2, 1, 2), ann(3, 2, 1), ann(4, 2, 1)], 2);
        let m = cooccurrence_matrix(&ds);
        assert_eq!(m.count(1, 1), Ok(2));
        assert_eq!(m.count(2, 2), Ok(1));
        assert_eq!(m.count(1, 2), Ok(1));
        assert_eq!(m.count(2, 1), Ok(1));
        assert_eq!(conditional_presence(&m, 2, 1), Ok(1.0));
        assert_eq!(conditional_presence(&m, 1, 2), Ok(0.5));
        assert_eq!(conditional_presence(&m, 1, 1), Ok(1.0));
        assert_eq!(conditional_presence(&m, 1, 3), Ok(0.0));
        assert_eq!(conditional_presence(&m, 3, 1), Err(CooccurError::Undefined(3)));
        assert_eq!(m.count(9, 1), Err(CooccurError::UnknownCategory(9)));
        assert_eq!(m.to_csv(), "A,B,C\n2,1,0\n1,1,0\n0,0,0\n");
    }

    #[test]
    fn empty_dataset() {
        let m = cooccurrence_matrix(&dataset(vec![], 0));
        assert!(m.counts.iter().all(|&c| c == 0));
        assert!(cooccurrence_matrix(&Dataset::empty()).category_ids().is_empty());
    }

    proptest! {
        #[test]
        fn invariants(pairs in proptest::collection::vec((1u64..6, 1u64..4), 0..30), dup in 0usize..30) {
            let mut anns: Vec<Annotation> = pairs.iter().enumerate()
                .map(|(i, &(img, cat))| ann(i as u64 + 1, img, cat)).collect();
            let m = cooccurrence_matrix(&dataset(anns.clone(), 5));
            for a in 1..4 {
                for b in 1..4 {
                    let ab = m.count(a, b).unwrap();
                    prop_assert_eq!(ab, m.count(b, a).unwrap());
                    prop_assert!(ab <= m.count(a, a).unwrap().min(m.count(b, b).unwrap()));
                }
            }
            // duplicating an annotation within its image changes nothing
            if !anns.is_empty() {
                let mut copy = anns[dup % anns.len()].clone();
                copy.id = 1000;
                anns.push(copy);
                prop_assert_eq!(cooccurrence_matrix(&dataset(anns, 5)), m);
            }
        }
    }
}
