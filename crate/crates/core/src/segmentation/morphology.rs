//! Connected components, binary morphology and convex hulls on masks.

use super::mask::{BinaryMask, BoundingBox};

/// One 8-connected foreground component.
#[derive(Debug, Clone)]
pub struct Component {
    pub area: usize,
    pub bbox: BoundingBox,
    /// Flat pixel indices in scan order.
    pub pixels: Vec<usize>,
}

impl Component {
    pub fn to_mask(&self, width: usize, height: usize) -> BinaryMask {
        let mut m = BinaryMask::empty(width, height);
        for &i in &self.pixels {
            m.set(i % width, i / width, true);
        }
        m
    }
}

/// Labels 8-connected components; the result is ordered by area descending,
/// ties by first pixel in scan order.
pub fn connected_components(mask: &BinaryMask) -> Vec<Component> {
    let (w, h) = mask.dims();
    let mut seen = vec![false; w * h];
    let mut comps = Vec::new();
    let mut stack = Vec::new();
    for start in 0..w * h {
        if seen[start] || !mask.bits()[start] {
            continue;
        }
        seen[start] = true;
        stack.push(start);
        let mut pixels = Vec::new();
        while let Some(i) = stack.pop() {
            pixels.push(i);
            let (x, y) = ((i % w) as isize, (i / w) as isize);
            for dy in -1..=1 {
                for dx in -1..=1 {
                    let (nx, ny) = (x + dx, y + dy);
                    if nx < 0 || ny < 0 || nx >= w as isize || ny >= h as isize {
                        continue;
                    }
                    let j = ny as usize * w + nx as usize;
                    if !seen[j] && mask.bits()[j] {
                        seen[j] = true;
                        stack.push(j);
                    }
                }
            }
        }
        pixels.sort_unstable();
        let bbox = pixels.iter().fold(
            BoundingBox {
                x0: usize::MAX,
                y0: usize::MAX,
                x1: 0,
                y1: 0,
            },
            |b, &i| BoundingBox {
                x0: b.x0.min(i % w),
                y0: b.y0.min(i / w),
                x1: b.x1.max(i % w),
                y1: b.y1.max(i / w),
            },
        );
        comps.push(Component {
            area: pixels.len(),
            bbox,
            pixels,
        });
    }
    comps.sort_by(|a, b| b.area.cmp(&a.area).then(a.pixels[0].cmp(&b.pixels[0])));
    comps
}

/// Offsets of a disc structuring element of the given radius
/// (radius 2 is the 13-pixel 5x5 disc).
pub fn disc(radius: isize) -> Vec<(isize, isize)> {
    let mut se = Vec::new();
    for dy in -radius..=radius {
        for dx in -radius..=radius {
            if dx * dx + dy * dy <= radius * radius {
                se.push((dx, dy));
            }
        }
    }
    se
}

/// Erosion; `outside` is the value assumed beyond the image border.
pub fn erode(mask: &BinaryMask, se: &[(isize, isize)], outside: bool) -> BinaryMask {
    let (w, h) = mask.dims();
    BinaryMask::from_fn(w, h, |x, y| {
        se.iter().all(|&(dx, dy)| {
            let (nx, ny) = (x as isize + dx, y as isize + dy);
            if nx < 0 || ny < 0 || nx >= w as isize || ny >= h as isize {
                outside
            } else {
                mask.get(nx as usize, ny as usize)
            }
        })
    })
}

pub fn dilate(mask: &BinaryMask, se: &[(isize, isize)]) -> BinaryMask {
    let (w, h) = mask.dims();
    BinaryMask::from_fn(w, h, |x, y| {
        se.iter().any(|&(dx, dy)| {
            let (nx, ny) = (x as isize - dx, y as isize - dy);
            nx >= 0 && ny >= 0 && nx < w as isize && ny < h as isize && mask.get(nx as usize, ny as usize)
        })
    })
}

pub fn opening(mask: &BinaryMask, se: &[(isize, isize)]) -> BinaryMask {
    dilate(&erode(mask, se, false), se)
}

/// Closing with the border treated as foreground during the erosion step, so
/// the result always contains the input.
pub fn closing(mask: &BinaryMask, se: &[(isize, isize)]) -> BinaryMask {
    erode(&dilate(mask, se), se, true)
}

fn cross(o: (f64, f64), a: (f64, f64), b: (f64, f64)) -> f64 {
    (a.0 - o.0) * (b.1 - o.1) - (a.1 - o.1) * (b.0 - o.0)
}

/// Convex hull (counter-clockwise in x/y) of pixel centres, via the monotone
/// chain. Only the leftmost and rightmost pixel of each row are candidates.
pub fn hull_polygon(width: usize, pixels: &[usize]) -> Vec<(f64, f64)> {
    let mut rows: std::collections::BTreeMap<usize, (usize, usize)> = Default::default();
    for &i in pixels {
        let (x, y) = (i % width, i / width);
        let e = rows.entry(y).or_insert((x, x));
        e.0 = e.0.min(x);
        e.1 = e.1.max(x);
    }
    let mut pts: Vec<(f64, f64)> = Vec::with_capacity(rows.len() * 2);
    for (&y, &(a, b)) in &rows {
        pts.push((a as f64, y as f64));
        if b != a {
            pts.push((b as f64, y as f64));
        }
    }
    pts.sort_by(|p, q| p.0.total_cmp(&q.0).then(p.1.total_cmp(&q.1)));
    pts.dedup();
    if pts.len() < 3 {
        return pts;
    }
    let mut hull: Vec<(f64, f64)> = Vec::with_capacity(2 * pts.len());
    for &p in &pts {
        while hull.len() >= 2 && cross(hull[hull.len() - 2], hull[hull.len() - 1], p) <= 0.0 {
            hull.pop();
        }
        hull.push(p);
    }
    let lower = hull.len() + 1;
    for &p in pts.iter().rev().skip(1) {
        while hull.len() >= lower && cross(hull[hull.len() - 2], hull[hull.len() - 1], p) <= 0.0 {
            hull.pop();
        }
        hull.push(p);
    }
    hull.pop();
    hull
}

/// Rasterizes the convex hull of `pixels`: a pixel belongs to the hull when its
/// centre lies inside or on the hull polygon.
pub fn hull_mask(width: usize, height: usize, pixels: &[usize]) -> BinaryMask {
    let mut out = BinaryMask::empty(width, height);
    if pixels.is_empty() {
        return out;
    }
    let poly = hull_polygon(width, pixels);
    const EPS: f64 = 1e-9;
    let (ymin, ymax) = poly
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), p| (a.min(p.1), b.max(p.1)));
    for y in ymin as usize..=ymax as usize {
        let yf = y as f64;
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        let n = poly.len();
        for k in 0..n {
            let a = poly[k];
            let b = poly[(k + 1) % n];
            if (a.1 - yf).abs() < EPS && (b.1 - yf).abs() < EPS {
                lo = lo.min(a.0.min(b.0));
                hi = hi.max(a.0.max(b.0));
            } else if (a.1 - yf) * (b.1 - yf) <= EPS {
                if (a.1 - b.1).abs() < EPS {
                    continue;
                }
                let t = (yf - a.1) / (b.1 - a.1);
                let x = a.0 + t * (b.0 - a.0);
                lo = lo.min(x);
                hi = hi.max(x);
            }
        }
        if n == 1 {
            lo = poly[0].0;
            hi = poly[0].0;
        }
        if lo > hi {
            continue;
        }
        let x0 = (lo - EPS).ceil().max(0.0) as usize;
        let x1 = ((hi + EPS).floor() as usize).min(width - 1);
        for x in x0..=x1 {
            out.set(x, y, true);
        }
    }
    out
}
