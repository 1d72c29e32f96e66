//! Dataset statistics, splitting, serialization and synthesis geometry.

use image::RgbImage;
use logodet::dataset::synth::{procedural_backgrounds, procedural_templates};
use logodet::dataset::{
    dataset_stats, parse_annotations, parse_class_table, render_annotations, render_class_table, split_dataset,
    synthesize_dataset, AnnotatedObject, Annotation, Dataset, SplitFractions, SynthesisParams,
};
use logodet::rng::stream_rng;
use logodet::{iou, BoundingBox, BrandMap, LogoClassId};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::Rng;

/// A manifest with the published aggregates of the smaller benchmark set:
/// 8460 images, 18 classes over 10 brands, 16,043 objects, mean width 564.
fn eighteen_class_manifest() -> Dataset {
    let pairs: Vec<(String, String)> = (0..18).map(|c| (format!("logo{c:02}"), format!("brand{}", c % 10))).collect();
    let map = BrandMap::from_pairs(&pairs).unwrap();
    let obj = |k: usize| AnnotatedObject {
        bbox: BoundingBox::new(10.0, 10.0, 60.0, 40.0).unwrap(),
        cls: LogoClassId((k % 18) as u32 + 1),
    };
    let mut next = 0;
    let annotations = (0..8460)
        .map(|i| {
            let n = if i < 7583 { 2 } else { 1 };
            let objects = (0..n).map(|_| {
                next += 1;
                obj(next - 1)
            });
            Annotation {
                image: format!("img{i:05}.jpg"),
                width: if i % 2 == 0 { 500 } else { 628 },
                height: 480,
                objects: objects.collect(),
            }
        })
        .collect();
    Dataset::new(annotations, map).unwrap()
}

#[test]
fn eighteen_class_manifest_aggregates() {
    let s = dataset_stats(&eighteen_class_manifest());
    assert_eq!((s.num_images, s.num_classes, s.num_brands, s.num_objects), (8460, 18, 10, 16_043));
    assert_eq!(s.mean_width, 564.0);
    assert_eq!(s.objects_per_class.iter().map(|c| c.count).sum::<usize>(), 16_043);
    assert_eq!(s.objects_per_brand.iter().map(|c| c.count).sum::<usize>(), 16_043);
}

#[test]
fn manifest_split_uses_floor_rule() {
    let (a, b, c) = split_dataset(&eighteen_class_manifest(), SplitFractions { train: 0.5, val: 0.2, test: 0.3 }, 3).unwrap();
    assert_eq!((a.len(), b.len(), c.len()), (4230, 1692, 2538));
}

fn random_dataset(seed: u64, n: usize) -> Dataset {
    let mut rng = stream_rng(seed, 0);
    let map = BrandMap::from_pairs(&[("α-logo", "Ωmega"), ("b\u{e9}ta", "Ωmega"), ("日本", "ブランド"), ("plain", "x y")]).unwrap();
    let anns = (0..n)
        .map(|i| {
            let (w, h) = (rng.random_range(20..200u32), rng.random_range(20..200u32));
            let objects = (0..rng.random_range(0..4))
                .map(|_| {
                    let x0 = rng.random_range(0.0..w as f64 - 2.0);
                    let y0 = rng.random_range(0.0..h as f64 - 2.0);
                    let x1 = rng.random_range(x0 + 1.0..=w as f64);
                    let y1 = rng.random_range(y0 + 1.0..=h as f64);
                    AnnotatedObject {
                        bbox: BoundingBox::new(x0, y0, x1, y1).unwrap(),
                        cls: LogoClassId(rng.random_range(1..=4)),
                    }
                })
                .collect();
            Annotation { image: format!("dir/{i}_ü.png"), width: w, height: h, objects }
        })
        .collect();
    Dataset::new(anns, map).unwrap()
}

proptest! {
    #[test]
    fn text_formats_round_trip(seed in any::<u64>(), n in 0usize..12) {
        let ds = random_dataset(seed, n);
        let map = parse_class_table(&render_class_table(&ds.brand_map)).unwrap();
        prop_assert_eq!(&map, &ds.brand_map);
        let anns = parse_annotations(&render_annotations(&ds.annotations, &map), &map).unwrap();
        prop_assert_eq!(anns, ds.annotations);
    }

    #[test]
    fn stats_ignore_image_order(seed in any::<u64>(), n in 0usize..30) {
        let ds = random_dataset(seed, n);
        let mut shuffled = ds.clone();
        shuffled.annotations.shuffle(&mut stream_rng(seed, 9));
        prop_assert_eq!(dataset_stats(&ds), dataset_stats(&shuffled));
    }

    #[test]
    fn splits_partition_the_images(n in 0usize..120, a in 0u32..100, b in 0u32..100, seed in any::<u64>()) {
        let total = (a + b + 1) as f64;
        let f = SplitFractions { train: a as f64 / total, val: b as f64 / total, test: 1.0 / total };
        let ds = random_dataset(seed, n);
        let (tr, va, te) = split_dataset(&ds, f, seed).unwrap();
        let mut names: Vec<&str> = [&tr, &va, &te].iter().flat_map(|d| d.annotations.iter().map(|x| x.image.as_str())).collect();
        prop_assert_eq!(names.len(), n);
        names.sort();
        names.dedup();
        prop_assert_eq!(names.len(), n);
        prop_assert_eq!(tr.len(), (n as f64 * f.train + 1e-9).floor() as usize);
        prop_assert_eq!(va.len(), (n as f64 * f.val + 1e-9).floor() as usize);
        let again = split_dataset(&ds, f, seed).unwrap();
        prop_assert_eq!((tr, va, te), again);
    }
}

/// Tight box of the output pixels whose centres map back inside the
/// template rectangle.
fn rasterized_footprint(tf: &logodet::dataset::synth::LogoTransform, bg: (u32, u32)) -> Option<BoundingBox> {
    let (tw, th) = (tf.template_size.0 as f64, tf.template_size.1 as f64);
    let mut ext: Option<[u32; 4]> = None;
    for y in 0..bg.1 {
        for x in 0..bg.0 {
            let (u, v) = tf.inverse(x as f64 + 0.5, y as f64 + 0.5);
            if (0.0..tw).contains(&u) && (0.0..th).contains(&v) {
                let e = ext.get_or_insert([x, y, x + 1, y + 1]);
                *e = [e[0].min(x), e[1].min(y), e[2].max(x + 1), e[3].max(y + 1)];
            }
        }
    }
    ext.map(|e| BoundingBox::new(e[0] as f64, e[1] as f64, e[2] as f64, e[3] as f64).unwrap())
}

#[test]
fn synthesized_boxes_match_rasterized_footprint() {
    let (map, templates) = procedural_templates(3, 2);
    let backgrounds: Vec<RgbImage> = procedural_backgrounds(4, 224, 224, 5);
    let params = SynthesisParams {
        scale: [0.5, 1.4],
        rotation_deg: [-40.0, 40.0],
        shear: [-0.3, 0.3],
        objects_per_image: [1, 3],
        seed: 17,
        ..Default::default()
    };
    let out = synthesize_dataset(&templates, &backgrounds, &map, &params, 40).unwrap();
    let mut checked = 0;
    for (ann, placed) in out.dataset.annotations.iter().zip(&out.placements) {
        assert_eq!(ann.objects.len(), placed.len());
        for (o, p) in ann.objects.iter().zip(placed) {
            let truth = rasterized_footprint(&p.transform, (ann.width, ann.height)).unwrap();
            let v = iou(&o.bbox, &truth);
            assert!(v >= 0.9, "{} {:?} vs {:?}: {v}", ann.image, o.bbox, truth);
            checked += 1;
        }
    }
    assert!(checked >= 40);
}
