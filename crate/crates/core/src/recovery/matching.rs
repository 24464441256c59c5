use crate::kdtree::NearestIndex;
use crate::pointmap::Pointmap;

/// A mutual nearest-neighbor match between two pointmaps.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Match {
    /// `(i, j)` in the first image.
    pub pixel1: (usize, usize),
    /// `(i, j)` in the second image.
    pub pixel2: (usize, usize),
    /// 3D distance between the matched points.
    pub distance: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Correspondences {
    /// Sorted by the linear index of `pixel1`.
    pub matches: Vec<Match>,
}

impl Correspondences {
    pub fn len(&self) -> usize {
        self.matches.len()
    }

    pub fn is_empty(&self) -> bool {
        self.matches.is_empty()
    }
}

/// Mutual nearest neighbors in 3D between two pointmaps expressed in the
/// same frame, as `(index1, index2, distance)` on linear pixel indices.
pub fn match_indices(pm1: &Pointmap, pm2: &Pointmap) -> Vec<(usize, usize, f64)> {
    let items = |pm: &Pointmap| pm.iter_valid().map(|(k, p)| (*p, k)).collect::<Vec<_>>();
    let (items1, items2) = (items(pm1), items(pm2));
    if items1.is_empty() || items2.is_empty() {
        return Vec::new();
    }
    let index1 = NearestIndex::new(items1.clone());
    let index2 = NearestIndex::new(items2);

    let mut back = vec![usize::MAX; pm2.size().len()];
    for (k, p) in pm2.iter_valid() {
        back[k] = index1.nearest(p).expect("non-empty").id;
    }
    items1
        .iter()
        .filter_map(|(p, i)| {
            let nn = index2.nearest(p).expect("non-empty");
            (back[nn.id] == *i).then(|| (*i, nn.id, nn.dist_sq.sqrt()))
        })
        .collect()
}

/// Reciprocal nearest-neighbor correspondences over valid pixels.
pub fn match_points(pm1: &Pointmap, pm2: &Pointmap) -> Correspondences {
    let (s1, s2) = (pm1.size(), pm2.size());
    Correspondences {
        matches: match_indices(pm1, pm2)
            .into_iter()
            .map(|(a, b, d)| Match {
                pixel1: s1.pixel(a),
                pixel2: s2.pixel(b),
                distance: d,
            })
            .collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::ImageSize;
    use nalgebra::Vector3;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_pm(rng: &mut ChaCha8Rng, size: ImageSize) -> Pointmap {
        Pointmap::from_fn(size, |_, _| {
            rng.random_bool(0.9).then(|| {
                Vector3::new(
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                )
            })
        })
    }

    #[test]
    fn identical_maps_match_to_themselves() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let pm = random_pm(&mut rng, ImageSize::new(9, 7).unwrap());
        let m = match_indices(&pm, &pm);
        assert_eq!(m.len(), pm.valid_count());
        assert!(m.iter().all(|&(a, b, d)| a == b && d == 0.0));
    }

    #[test]
    fn swapped_points_match_crosswise() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let size = ImageSize::new(6, 6).unwrap();
        let pm1 = Pointmap::from_fn(size, |_, _| {
            Some(Vector3::new(
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
            ))
        });
        let mut pts = pm1.points().to_vec();
        pts.swap(3, 20);
        let pm2 = Pointmap::from_points(size, pts).unwrap();
        for (a, b, _) in match_indices(&pm1, &pm2) {
            let expected = match a {
                3 => 20,
                20 => 3,
                x => x,
            };
            assert_eq!(b, expected);
        }
        assert_eq!(match_indices(&pm1, &pm2).len(), size.len());
    }

    #[test]
    fn fully_invalid_map_gives_no_matches() {
        let size = ImageSize::new(3, 3).unwrap();
        let pm1 = Pointmap::from_fn(size, |i, j| Some(Vector3::new(i as f64, j as f64, 1.0)));
        let pm2 = Pointmap::from_fn(size, |_, _| None);
        assert!(match_points(&pm1, &pm2).is_empty());
    }
}
