//! Graph-based over-segmentation (Felzenszwalb-Huttenlocher).

use image::RgbImage;

/// Image as planar `f32` channels.
#[derive(Debug, Clone)]
pub struct Planes {
    pub width: usize,
    pub height: usize,
    pub channels: Vec<Vec<f32>>,
}

impl Planes {
    pub fn from_rgb(img: &RgbImage) -> Self {
        let (w, h) = (img.width() as usize, img.height() as usize);
        let mut channels = vec![Vec::with_capacity(w * h); 3];
        for px in img.pixels() {
            for (c, v) in channels.iter_mut().zip(px.0) {
                c.push(v as f32);
            }
        }
        Planes { width: w, height: h, channels }
    }

    pub fn len(&self) -> usize {
        self.width * self.height
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Separable Gaussian blur with edge clamping; `sigma <= 0` is a no-op.
    pub fn smoothed(&self, sigma: f64) -> Planes {
        if sigma <= 0.0 {
            return self.clone();
        }
        let radius = (4.0 * sigma).ceil() as i64;
        let mut kernel: Vec<f32> = (-radius..=radius)
            .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp() as f32)
            .collect();
        let total: f32 = kernel.iter().sum();
        kernel.iter_mut().for_each(|k| *k /= total);
        let (w, h) = (self.width as i64, self.height as i64);
        let channels = self
            .channels
            .iter()
            .map(|src| {
                let mut tmp = vec![0f32; src.len()];
                for y in 0..h {
                    for x in 0..w {
                        let mut acc = 0.0;
                        for (k, kv) in kernel.iter().enumerate() {
                            let xx = (x + k as i64 - radius).clamp(0, w - 1);
                            acc += kv * src[(y * w + xx) as usize];
                        }
                        tmp[(y * w + x) as usize] = acc;
                    }
                }
                let mut out = vec![0f32; src.len()];
                for y in 0..h {
                    for x in 0..w {
                        let mut acc = 0.0;
                        for (k, kv) in kernel.iter().enumerate() {
                            let yy = (y + k as i64 - radius).clamp(0, h - 1);
                            acc += kv * tmp[(yy * w + x) as usize];
                        }
                        out[(y * w + x) as usize] = acc;
                    }
                }
                out
            })
            .collect();
        Planes { width: self.width, height: self.height, channels }
    }
}

/// Per-pixel region labels in `0..num_regions`, numbered in raster order of
/// first appearance.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SegmentationMap {
    pub width: usize,
    pub height: usize,
    pub labels: Vec<u32>,
    pub num_regions: usize,
}

impl SegmentationMap {
    pub fn label(&self, x: usize, y: usize) -> u32 {
        self.labels[y * self.width + x]
    }

    pub fn region_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.num_regions];
        for &l in &self.labels {
            sizes[l as usize] += 1;
        }
        sizes
    }
}

struct DisjointSet {
    parent: Vec<u32>,
    rank: Vec<u8>,
    size: Vec<u32>,
    internal: Vec<f32>,
}

impl DisjointSet {
    fn new(n: usize) -> Self {
        DisjointSet {
            parent: (0..n as u32).collect(),
            rank: vec![0; n],
            size: vec![1; n],
            internal: vec![0.0; n],
        }
    }

    fn find(&mut self, mut x: u32) -> u32 {
        let mut root = x;
        while self.parent[root as usize] != root {
            root = self.parent[root as usize];
        }
        while self.parent[x as usize] != root {
            let next = self.parent[x as usize];
            self.parent[x as usize] = root;
            x = next;
        }
        root
    }

    fn union(&mut self, a: u32, b: u32, weight: f32) -> u32 {
        let (a, b) = if self.rank[a as usize] < self.rank[b as usize] { (b, a) } else { (a, b) };
        self.parent[b as usize] = a;
        if self.rank[a as usize] == self.rank[b as usize] {
            self.rank[a as usize] += 1;
        }
        self.size[a as usize] += self.size[b as usize];
        self.internal[a as usize] = weight;
        a
    }
}

/// Edges of the 8-connected pixel grid weighted by Euclidean colour distance,
/// sorted by weight (stable, so ties keep generation order).
fn grid_edges(planes: &Planes) -> Vec<(f32, u32, u32)> {
    let (w, h) = (planes.width, planes.height);
    let dist = |a: usize, b: usize| {
        planes
            .channels
            .iter()
            .map(|c| {
                let d = c[a] - c[b];
                d * d
            })
            .sum::<f32>()
            .sqrt()
    };
    let mut edges = Vec::with_capacity(w * h * 4);
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            let mut push = |j: usize| edges.push((dist(i, j), i as u32, j as u32));
            if x + 1 < w {
                push(i + 1);
            }
            if y + 1 < h {
                push(i + w);
                if x + 1 < w {
                    push(i + w + 1);
                }
                if x > 0 {
                    push(i + w - 1);
                }
            }
        }
    }
    edges.sort_by(|a, b| a.0.total_cmp(&b.0));
    edges
}

pub fn segment_planes(planes: &Planes, k: f64, min_size: usize) -> SegmentationMap {
    let n = planes.len();
    let edges = grid_edges(planes);
    let mut ds = DisjointSet::new(n);
    let k = k as f32;
    for &(wgt, a, b) in &edges {
        let (ra, rb) = (ds.find(a), ds.find(b));
        if ra == rb {
            continue;
        }
        let ta = ds.internal[ra as usize] + k / ds.size[ra as usize] as f32;
        let tb = ds.internal[rb as usize] + k / ds.size[rb as usize] as f32;
        if wgt <= ta.min(tb) {
            ds.union(ra, rb, wgt);
        }
    }
    for &(_, a, b) in &edges {
        let (ra, rb) = (ds.find(a), ds.find(b));
        if ra != rb && ((ds.size[ra as usize] as usize) < min_size || (ds.size[rb as usize] as usize) < min_size) {
            let keep = ds.internal[ra as usize].max(ds.internal[rb as usize]);
            ds.union(ra, rb, keep);
        }
    }

    let mut remap = vec![u32::MAX; n];
    let mut labels = Vec::with_capacity(n);
    let mut next = 0u32;
    for i in 0..n {
        let r = ds.find(i as u32) as usize;
        if remap[r] == u32::MAX {
            remap[r] = next;
            next += 1;
        }
        labels.push(remap[r]);
    }
    SegmentationMap { width: planes.width, height: planes.height, labels, num_regions: next as usize }
}

/// Over-segments an RGB image. Larger `k` favours larger regions; regions
/// smaller than `min_size` pixels are merged into a neighbour.
pub fn segment(image: &RgbImage, k: f64, min_size: usize) -> SegmentationMap {
    segment_planes(&Planes::from_rgb(image), k, min_size)
}
