use crate::autograd::Tensor;
use crate::error::{Error, Result};

/// A rectified stereo pair with optional dense ground truth.
#[derive(Clone, Debug, PartialEq)]
pub struct StereoSample {
    pub id: String,
    /// `[3, H, W]`, values in `[0, 1]`.
    pub left: Tensor<f32>,
    /// `[3, H, W]`.
    pub right: Tensor<f32>,
    /// `[H, W]` disparity in pixels.
    pub gt_disparity: Option<Tensor<f32>>,
    /// `[H, W]` with 1 where the ground truth is usable.
    pub valid: Option<Tensor<f32>>,
}

impl StereoSample {
    pub fn new(
        id: impl Into<String>,
        left: Tensor<f32>,
        right: Tensor<f32>,
        gt_disparity: Option<Tensor<f32>>,
        valid: Option<Tensor<f32>>,
    ) -> Result<Self> {
        let s = StereoSample {
            id: id.into(),
            left,
            right,
            gt_disparity,
            valid,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn height(&self) -> usize {
        self.left.shape()[1]
    }

    pub fn width(&self) -> usize {
        self.left.shape()[2]
    }

    pub fn validate(&self) -> Result<()> {
        let ls = self.left.shape();
        if ls.len() != 3 || ls[0] != 3 {
            return Err(Error::contract(format!("left image must be [3, H, W], got {ls:?}")));
        }
        if self.right.shape() != ls {
            return Err(Error::contract(format!(
                "right image shape {:?} differs from left {ls:?}",
                self.right.shape()
            )));
        }
        let hw = [ls[1], ls[2]];
        for (name, map) in [("gt_disparity", &self.gt_disparity), ("valid", &self.valid)] {
            if let Some(m) = map {
                if m.shape() != hw {
                    return Err(Error::contract(format!("{name} shape {:?} != {hw:?}", m.shape())));
                }
            }
        }
        Ok(())
    }

    /// Both spatial sizes must be multiples of four for the quarter-resolution network.
    pub fn check_network_size(&self) -> Result<()> {
        let (h, w) = (self.height(), self.width());
        if h % 4 != 0 || w % 4 != 0 || h == 0 || w == 0 {
            return Err(Error::contract(format!(
                "image size {h}x{w} is not a positive multiple of 4"
            )));
        }
        Ok(())
    }

    pub fn gt(&self) -> Result<&Tensor<f32>> {
        self.gt_disparity
            .as_ref()
            .ok_or_else(|| Error::contract(format!("sample `{}` has no ground-truth disparity", self.id)))
    }

    /// Validity mask, defaulting to all ones when only ground truth is present.
    pub fn valid_mask(&self) -> Result<Tensor<f32>> {
        match &self.valid {
            Some(v) => Ok(v.clone()),
            None => {
                let gt = self.gt()?;
                Ok(Tensor::full(gt.shape(), 1.0))
            }
        }
    }
}
