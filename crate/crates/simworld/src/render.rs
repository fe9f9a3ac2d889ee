use std::io::Write;
use std::path::Path;

use crate::scene::SceneSpec;
use crate::Result;

pub const IMAGE_SIZE: usize = 48;
pub const CHANNELS: usize = 3;
pub const BACKGROUND: [f64; 3] = [0.35, 0.30, 0.25];

/// RGB image stored channel-major (`3 × 48 × 48`), values in `[0, 1]`.
///
/// Row `i`, column `j` samples the workspace point
/// `((j + 0.5) / 48, (i + 0.5) / 48)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    data: Vec<f32>,
}

impl Image {
    pub fn filled(color: [f64; 3]) -> Image {
        let plane = IMAGE_SIZE * IMAGE_SIZE;
        let mut data = vec![0.0; CHANNELS * plane];
        for (c, chunk) in data.chunks_mut(plane).enumerate() {
            chunk.fill(color[c] as f32);
        }
        Image { data }
    }

    pub fn shape() -> [usize; 3] {
        [CHANNELS, IMAGE_SIZE, IMAGE_SIZE]
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn pixel(&self, row: usize, col: usize) -> [f32; 3] {
        let plane = IMAGE_SIZE * IMAGE_SIZE;
        let i = row * IMAGE_SIZE + col;
        [self.data[i], self.data[plane + i], self.data[2 * plane + i]]
    }

    fn set(&mut self, row: usize, col: usize, color: [f64; 3]) {
        let plane = IMAGE_SIZE * IMAGE_SIZE;
        let i = row * IMAGE_SIZE + col;
        for (c, v) in color.iter().enumerate() {
            self.data[c * plane + i] = *v as f32;
        }
    }

    /// Binary PPM (P6, maxval 255).
    pub fn to_ppm(&self) -> Vec<u8> {
        let mut out = format!("P6\n{IMAGE_SIZE} {IMAGE_SIZE}\n255\n").into_bytes();
        for row in 0..IMAGE_SIZE {
            for col in 0..IMAGE_SIZE {
                for v in self.pixel(row, col) {
                    out.push((v.clamp(0.0, 1.0) * 255.0).round() as u8);
                }
            }
        }
        out
    }

    pub fn write_ppm(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut f = std::fs::File::create(path)?;
        f.write_all(&self.to_ppm())?;
        Ok(())
    }
}

/// Workspace coordinate of a pixel center along one axis.
pub fn pixel_center(index: usize) -> f64 {
    (index as f64 + 0.5) / IMAGE_SIZE as f64
}

/// Rasterizes the scene in list order without anti-aliasing.
pub fn render(scene: &SceneSpec) -> Image {
    let mut img = Image::filled(BACKGROUND);
    for obj in &scene.objects {
        let r = obj.bounding_radius();
        let lo = |c: f64| (((c - r) * IMAGE_SIZE as f64).floor().max(0.0)) as usize;
        let hi = |c: f64| (((c + r) * IMAGE_SIZE as f64).ceil() as usize).min(IMAGE_SIZE);
        for row in lo(obj.y)..hi(obj.y) {
            for col in lo(obj.x)..hi(obj.x) {
                if obj.covers(pixel_center(col), pixel_center(row)) {
                    img.set(row, col, obj.color);
                }
            }
        }
    }
    img
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::{DomainKind, ObjectKind, ObjectSpec, Shape, Task};

    fn scene(objects: Vec<ObjectSpec>) -> SceneSpec {
        SceneSpec {
            task: Task::Picking,
            domain: DomainKind::SourcePlain,
            seed: 0,
            objects,
        }
    }

    #[test]
    fn empty_scene_is_background() {
        let img = render(&scene(vec![]));
        assert_eq!(img, Image::filled(BACKGROUND));
    }

    #[test]
    fn center_pixel_takes_template_color() {
        let obj = ObjectSpec {
            kind: ObjectKind::Template,
            shape: Shape::Square,
            color: [0.95, 0.95, 0.95],
            size: 0.1,
            x: 0.5,
            y: 0.5,
            theta: 0.3,
        };
        let img = render(&scene(vec![obj]));
        assert_eq!(img.pixel(24, 24), [0.95f32; 3]);
        assert_eq!(img.pixel(0, 0), BACKGROUND.map(|v| v as f32));
    }

    #[test]
    fn later_objects_paint_over_earlier() {
        let mut a = ObjectSpec {
            kind: ObjectKind::Clutter(1),
            shape: Shape::Disc,
            color: [1.0, 0.0, 0.0],
            size: 0.1,
            x: 0.5,
            y: 0.5,
            theta: 0.0,
        };
        let mut b = a;
        b.kind = ObjectKind::TaskObject(1);
        b.color = [0.0, 0.0, 1.0];
        let img = render(&scene(vec![a, b]));
        assert_eq!(img.pixel(24, 24), [0.0, 0.0, 1.0]);
        a.x = 0.2;
        let img = render(&scene(vec![b, a]));
        assert_eq!(img.pixel(24, 24), [0.0, 0.0, 1.0]);
    }

    #[test]
    fn ppm_header_and_length() {
        let ppm = Image::filled(BACKGROUND).to_ppm();
        assert!(ppm.starts_with(b"P6\n48 48\n255\n"));
        assert_eq!(ppm.len(), 13 + 48 * 48 * 3);
    }
}
