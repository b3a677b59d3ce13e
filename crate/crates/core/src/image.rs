//! Core raster and geometry types shared by every stage.
//!
//! Coordinates use the raster convention everywhere: origin at the top-left,
//! `x` is the column index and `y` is the row index.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A 2D raster of scalar intensities in `[0, 1]`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct GrayImage {
    pub width: u32,
    pub height: u32,
    pub pixels: Vec<f32>,
    /// Optional physical resolution, mm per pixel.
    pub pixel_spacing: Option<f64>,
}

impl GrayImage {
    pub fn new(width: u32, height: u32, pixels: Vec<f32>) -> Result<Self> {
        if pixels.len() != (width as usize) * (height as usize) {
            return Err(Error::InvalidParam {
                name: "pixels",
                reason: format!(
                    "expected {} values for {}x{}, got {}",
                    (width as usize) * (height as usize),
                    width,
                    height,
                    pixels.len()
                ),
            });
        }
        if let Some(&bad) = pixels
            .iter()
            .find(|v| !v.is_finite() || **v < 0.0 || **v > 1.0)
        {
            return Err(Error::InvalidParam {
                name: "pixels",
                reason: format!("intensity {bad} outside [0, 1]"),
            });
        }
        Ok(Self {
            width,
            height,
            pixels,
            pixel_spacing: None,
        })
    }

    pub fn zeros(width: u32, height: u32) -> Self {
        Self {
            width,
            height,
            pixels: vec![0.0; (width as usize) * (height as usize)],
            pixel_spacing: None,
        }
    }

    #[inline]
    pub fn get(&self, x: u32, y: u32) -> f32 {
        self.pixels[y as usize * self.width as usize + x as usize]
    }

    #[inline]
    pub fn set(&mut self, x: u32, y: u32, v: f32) {
        self.pixels[y as usize * self.width as usize + x as usize] = v;
    }
}

/// A 2D boolean raster, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryMask {
    pub width: u32,
    pub height: u32,
    pub bits: Vec<bool>,
}

impl BinaryMask {
    pub fn zeros(width: u32, height: u32) -> Self {
        Self {
            width,
            height,
            bits: vec![false; (width as usize) * (height as usize)],
        }
    }

    #[inline]
    pub fn get(&self, x: u32, y: u32) -> bool {
        self.bits[y as usize * self.width as usize + x as usize]
    }

    #[inline]
    pub fn set(&mut self, x: u32, y: u32, v: bool) {
        self.bits[y as usize * self.width as usize + x as usize] = v;
    }

    pub fn count_set(&self) -> usize {
        self.bits.iter().filter(|b| **b).count()
    }
}

/// An ordered list of (x, y) points; sub-pixel coordinates allowed.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PointSet {
    pub points: Vec<(f64, f64)>,
}

impl PointSet {
    pub fn new(points: Vec<(f64, f64)>) -> Self {
        Self { points }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Per-case acquisition metadata, read from a JSON sidecar.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CaseMeta {
    pub case_id: String,
    pub magnification_factor_specimen: f64,
    #[serde(default = "default_scene_factor")]
    pub magnification_factor_scene: f64,
}

fn default_scene_factor() -> f64 {
    1.0
}

impl CaseMeta {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("magnification_factor_specimen", self.magnification_factor_specimen),
            ("magnification_factor_scene", self.magnification_factor_scene),
        ] {
            if !v.is_finite() || v <= 0.0 {
                return Err(Error::InvalidParam {
                    name,
                    reason: format!("must be strictly positive and finite, got {v}"),
                });
            }
        }
        Ok(())
    }
}

/// An axis-aligned integer rectangle, top-left anchored.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rect {
    pub x0: u32,
    pub y0: u32,
    pub w: u32,
    pub h: u32,
}

impl Rect {
    pub fn new(x0: u32, y0: u32, w: u32, h: u32) -> Self {
        debug_assert!(w >= 1 && h >= 1);
        Self { x0, y0, w, h }
    }

    #[inline]
    pub fn x1(&self) -> u32 {
        self.x0 + self.w
    }

    #[inline]
    pub fn y1(&self) -> u32 {
        self.y0 + self.h
    }

    /// Intersection area in pixels squared; 0 when disjoint.
    pub fn intersection_area(&self, other: &Rect) -> u64 {
        let x0 = self.x0.max(other.x0);
        let y0 = self.y0.max(other.y0);
        let x1 = self.x1().min(other.x1());
        let y1 = self.y1().min(other.y1());
        if x1 > x0 && y1 > y0 {
            (x1 - x0) as u64 * (y1 - y0) as u64
        } else {
            0
        }
    }

    pub fn contains_point(&self, x: f64, y: f64) -> bool {
        x >= self.x0 as f64 && x < self.x1() as f64 && y >= self.y0 as f64 && y < self.y1() as f64
    }

    pub fn fits_within(&self, width: u32, height: u32) -> bool {
        self.x1() <= width && self.y1() <= height
    }
}
