use std::collections::{BTreeSet, BinaryHeap};

use image::RgbImage;
use rand::Rng;

use super::segment::{segment_planes, Planes};
use super::similarity::{adjacent_pairs, region_features, region_similarity, RegionFeatures, SimilarityTerms};
use super::{ColorSpace, ProposalParams, RegionProposal};
use crate::geometry::BoundingBox;
use crate::rng::stream_rng;

#[derive(PartialEq)]
struct Candidate {
    score: f64,
    a: usize,
    b: usize,
}

impl Eq for Candidate {}

impl Ord for Candidate {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        // Highest score first; ties go to the lowest region ids.
        self.score
            .total_cmp(&other.score)
            .then_with(|| other.a.cmp(&self.a))
            .then_with(|| other.b.cmp(&self.b))
    }
}

impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

/// One step of the grouping hierarchy.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Merge {
    pub left: usize,
    pub right: usize,
    pub result: usize,
}

/// All regions ever formed (initial regions first, then merges in order) and the merge log.
pub struct Hierarchy {
    pub regions: Vec<RegionFeatures>,
    pub merges: Vec<Merge>,
}

/// Greedy grouping: repeatedly merge the most similar adjacent pair until
/// one region remains (per connected component).
pub fn group_regions(
    initial: Vec<RegionFeatures>,
    adjacency: &[(u32, u32)],
    image_area: usize,
    terms: SimilarityTerms,
) -> Hierarchy {
    let mut regions = initial;
    let mut alive = vec![true; regions.len()];
    let mut neighbors: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); regions.len()];
    let mut heap = BinaryHeap::new();
    for &(a, b) in adjacency {
        let (a, b) = (a as usize, b as usize);
        neighbors[a].insert(b);
        neighbors[b].insert(a);
        let score = region_similarity(&regions[a], &regions[b], image_area).total(terms);
        heap.push(Candidate { score, a, b });
    }

    let mut merges = Vec::new();
    while let Some(Candidate { a, b, .. }) = heap.pop() {
        if !alive[a] || !alive[b] {
            continue;
        }
        let merged = regions[a].merge(&regions[b]);
        let id = regions.len();
        regions.push(merged);
        alive[a] = false;
        alive[b] = false;
        alive.push(true);

        let mut around: BTreeSet<usize> = neighbors[a].union(&neighbors[b]).copied().collect();
        around.remove(&a);
        around.remove(&b);
        for &n in &around {
            neighbors[n].remove(&a);
            neighbors[n].remove(&b);
            neighbors[n].insert(id);
            let score = region_similarity(&regions[n], &regions[id], image_area).total(terms);
            heap.push(Candidate { score, a: n, b: id });
        }
        neighbors[a].clear();
        neighbors[b].clear();
        neighbors.push(around);
        merges.push(Merge { left: a, right: b, result: id });
    }
    Hierarchy { regions, merges }
}

fn convert(image: &RgbImage, space: ColorSpace) -> Planes {
    let rgb = Planes::from_rgb(image);
    match space {
        ColorSpace::Rgb => rgb,
        ColorSpace::Intensity => {
            let n = rgb.len();
            let gray = (0..n)
                .map(|i| 0.299 * rgb.channels[0][i] + 0.587 * rgb.channels[1][i] + 0.114 * rgb.channels[2][i])
                .collect();
            Planes { width: rgb.width, height: rgb.height, channels: vec![gray] }
        }
        ColorSpace::Hsv => {
            let n = rgb.len();
            let mut ch = vec![Vec::with_capacity(n); 3];
            for i in 0..n {
                let (r, g, b) = (rgb.channels[0][i], rgb.channels[1][i], rgb.channels[2][i]);
                let max = r.max(g).max(b);
                let min = r.min(g).min(b);
                let d = max - min;
                let h = if d == 0.0 {
                    0.0
                } else if max == r {
                    60.0 * ((g - b) / d).rem_euclid(6.0)
                } else if max == g {
                    60.0 * ((b - r) / d + 2.0)
                } else {
                    60.0 * ((r - g) / d + 4.0)
                };
                let s = if max == 0.0 { 0.0 } else { d / max };
                ch[0].push(h / 360.0 * 255.0);
                ch[1].push(s * 255.0);
                ch[2].push(max);
            }
            Planes { width: rgb.width, height: rgb.height, channels: ch }
        }
    }
}

/// Ranked region boxes of one grouping strategy: `(priority, box)`.
fn strategy_boxes(image: &RgbImage, params: &ProposalParams, space: ColorSpace, stream: u64) -> Vec<(f64, [u32; 4])> {
    let planes = convert(image, space);
    let seg = segment_planes(&planes.smoothed(params.sigma), params.k, params.min_size);
    let features = region_features(&planes, &seg);
    let adjacency = adjacent_pairs(&seg);
    let hierarchy = group_regions(features, &adjacency, planes.len(), SimilarityTerms::default());

    // The region formed last is position 1; earlier regions get larger
    // positions, then a uniform factor perturbs the order.
    let total = hierarchy.regions.len();
    let mut rng = stream_rng(params.seed, stream);
    hierarchy
        .regions
        .iter()
        .enumerate()
        .map(|(id, r)| ((total - id) as f64 * rng.random::<f64>(), r.bbox))
        .collect()
}

pub fn selective_search(image: &RgbImage, params: &ProposalParams) -> Vec<RegionProposal> {
    if image.width() == 0 || image.height() == 0 {
        return Vec::new();
    }
    let mut pooled: Vec<(f64, usize, usize, [u32; 4])> = Vec::new();
    for (s, &space) in params.color_spaces.iter().enumerate() {
        for (i, (p, b)) in strategy_boxes(image, params, space, s as u64).into_iter().enumerate() {
            pooled.push((p, s, i, b));
        }
    }
    pooled.sort_by(|x, y| x.0.total_cmp(&y.0).then(x.1.cmp(&y.1)).then(x.2.cmp(&y.2)));

    let mut seen = std::collections::HashSet::new();
    let mut out = Vec::new();
    for (_, _, _, b) in pooled {
        if out.len() >= params.top_k {
            break;
        }
        if seen.insert(b) {
            let bbox = BoundingBox::new(b[0] as f64, b[1] as f64, b[2] as f64, b[3] as f64)
                .expect("regions are non-empty");
            out.push(RegionProposal { bbox, rank: out.len() });
        }
    }
    out
}
