use serde::Serialize;

use super::Dataset;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClassCount {
    pub name: String,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DatasetStats {
    pub num_images: usize,
    pub num_objects: usize,
    pub num_classes: usize,
    pub num_brands: usize,
    pub objects_per_class: Vec<ClassCount>,
    pub objects_per_brand: Vec<ClassCount>,
    /// Images containing at least one logo of the brand.
    pub images_per_brand: Vec<ClassCount>,
    pub mean_width: f64,
    pub mean_height: f64,
}

pub fn dataset_stats(ds: &Dataset) -> DatasetStats {
    let map = &ds.brand_map;
    let mut per_class = vec![0usize; map.num_classes()];
    let mut per_brand = vec![0usize; map.num_brands()];
    let mut brand_images = vec![0usize; map.num_brands()];
    let (mut w_sum, mut h_sum) = (0u64, 0u64);

    for a in &ds.annotations {
        w_sum += a.width as u64;
        h_sum += a.height as u64;
        let mut present = vec![false; map.num_brands()];
        for o in &a.objects {
            per_class[o.cls.index() - 1] += 1;
            let b = map.brand_of(o.cls).expect("validated class").index();
            per_brand[b] += 1;
            present[b] = true;
        }
        for (count, p) in brand_images.iter_mut().zip(present) {
            *count += p as usize;
        }
    }

    let n = ds.len();
    let mean = |s: u64| if n == 0 { 0.0 } else { s as f64 / n as f64 };
    let named = |names: &[String], counts: Vec<usize>| {
        names.iter().zip(counts).map(|(name, count)| ClassCount { name: name.clone(), count }).collect()
    };
    DatasetStats {
        num_images: n,
        num_objects: per_class.iter().sum(),
        num_classes: map.num_classes(),
        num_brands: map.num_brands(),
        objects_per_class: named(map.class_names(), per_class),
        objects_per_brand: named(map.brand_names(), per_brand),
        images_per_brand: named(map.brand_names(), brand_images),
        mean_width: mean(w_sum),
        mean_height: mean(h_sum),
    }
}
