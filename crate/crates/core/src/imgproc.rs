//! Small single-plane image helpers used by the synthetic teachers and the
//! data generator. Planes are row-major `h x w` `f32` buffers.

#[derive(Clone, Debug, PartialEq)]
pub struct Plane {
    pub h: usize,
    pub w: usize,
    pub data: Vec<f32>,
}

impl Plane {
    pub fn new(h: usize, w: usize, data: Vec<f32>) -> Self {
        assert_eq!(h * w, data.len());
        Plane { h, w, data }
    }

    pub fn filled(h: usize, w: usize, v: f32) -> Self {
        Plane { h, w, data: vec![v; h * w] }
    }

    #[inline]
    pub fn at(&self, y: usize, x: usize) -> f32 {
        self.data[y * self.w + x]
    }

    /// Clamped (edge-replicating) access.
    #[inline]
    pub fn at_clamped(&self, y: isize, x: isize) -> f32 {
        let y = y.clamp(0, self.h as isize - 1) as usize;
        let x = x.clamp(0, self.w as isize - 1) as usize;
        self.at(y, x)
    }

    pub fn map(&self, f: impl Fn(f32) -> f32) -> Plane {
        Plane::new(self.h, self.w, self.data.iter().map(|&v| f(v)).collect())
    }

    pub fn zip(&self, other: &Plane, f: impl Fn(f32, f32) -> f32) -> Plane {
        assert_eq!((self.h, self.w), (other.h, other.w));
        Plane::new(
            self.h,
            self.w,
            self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(),
        )
    }

    /// 2x2 mean with right/bottom edge replication for odd sizes.
    pub fn pool2(&self) -> Plane {
        let (oh, ow) = (self.h.div_ceil(2), self.w.div_ceil(2));
        let mut out = Vec::with_capacity(oh * ow);
        for oy in 0..oh {
            let (y0, y1) = (2 * oy, (2 * oy + 1).min(self.h - 1));
            for ox in 0..ow {
                let (x0, x1) = (2 * ox, (2 * ox + 1).min(self.w - 1));
                out.push((self.at(y0, x0) + self.at(y0, x1) + self.at(y1, x0) + self.at(y1, x1)) * 0.25);
            }
        }
        Plane::new(oh, ow, out)
    }

    /// Repeated [`Plane::pool2`] so that stage `s` has `1 / 2^(s-1)` resolution.
    pub fn to_stage(&self, stage: usize) -> Plane {
        let mut p = self.clone();
        for _ in 1..stage {
            p = p.pool2();
        }
        p
    }

    /// Separable `(2r+1)`-tap box filter with edge replication.
    pub fn box_blur(&self, r: usize) -> Plane {
        if r == 0 {
            return self.clone();
        }
        let r = r as isize;
        let n = (2 * r + 1) as f32;
        let mut tmp = vec![0.0; self.data.len()];
        for y in 0..self.h {
            for x in 0..self.w {
                let s: f32 = (-r..=r).map(|d| self.at_clamped(y as isize, x as isize + d)).sum();
                tmp[y * self.w + x] = s / n;
            }
        }
        let tmp = Plane::new(self.h, self.w, tmp);
        let mut out = vec![0.0; self.data.len()];
        for y in 0..self.h {
            for x in 0..self.w {
                let s: f32 = (-r..=r).map(|d| tmp.at_clamped(y as isize + d, x as isize)).sum();
                out[y * self.w + x] = s / n;
            }
        }
        Plane::new(self.h, self.w, out)
    }

    pub fn mean(&self) -> f32 {
        (self.data.iter().map(|&v| v as f64).sum::<f64>() / self.data.len() as f64) as f32
    }

    pub fn std(&self) -> f32 {
        let m = self.mean() as f64;
        let var = self
            .data
            .iter()
            .map(|&v| (v as f64 - m).powi(2))
            .sum::<f64>()
            / self.data.len() as f64;
        var.sqrt() as f32
    }
}

/// Splits a `[C, H, W]` buffer into planes.
pub fn planes(data: &[f32], c: usize, h: usize, w: usize) -> Vec<Plane> {
    (0..c)
        .map(|k| Plane::new(h, w, data[k * h * w..(k + 1) * h * w].to_vec()))
        .collect()
}

/// SplitMix64 finaliser; the data generator and teachers use it as a
/// stateless hash for reproducible procedural noise.
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Uniform `[0, 1)` from a hash of the given words.
pub fn hash_unit(words: &[u64]) -> f64 {
    let h = words.iter().fold(0x51_7C_C1_B7_27_22_0A_95u64, |acc, &w| mix64(acc ^ w));
    (h >> 11) as f64 / (1u64 << 53) as f64
}

/// FNV-1a over a string, for folding sample ids into seeds.
pub fn hash_str(s: &str) -> u64 {
    s.bytes().fold(0xcbf2_9ce4_8422_2325u64, |h, b| (h ^ b as u64).wrapping_mul(0x0100_0000_01b3))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn blur_and_pool_keep_constants() {
        let p = Plane::filled(5, 7, 0.25);
        assert_eq!(p.box_blur(2), p);
        assert!(p.pool2().data.iter().all(|&v| v == 0.25));
        assert_eq!(p.to_stage(3).h, 2);
        assert_eq!(p.to_stage(3).w, 2);
    }

    #[test]
    fn hash_unit_is_deterministic_and_in_range() {
        let a = hash_unit(&[1, 2, 3]);
        assert_eq!(a, hash_unit(&[1, 2, 3]));
        assert_ne!(a, hash_unit(&[1, 2, 4]));
        assert!((0.0..1.0).contains(&a));
    }
}
