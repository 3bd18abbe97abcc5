use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// `H x W x C` image with values in `[0, 1]`, row-major, channels last.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f64>,
}

impl Image {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 || channels == 0 {
            return Err(Error::shape(format!(
                "image dims {height}x{width}x{channels} must be positive"
            )));
        }
        if data.len() != height * width * channels {
            return Err(Error::shape(format!(
                "image {height}x{width}x{channels} needs {} values, got {}",
                height * width * channels,
                data.len()
            )));
        }
        Ok(Self {
            height,
            width,
            channels,
            data,
        })
    }

    pub fn zeros(height: usize, width: usize, channels: usize) -> Self {
        Self {
            height,
            width,
            channels,
            data: vec![0.0; height * width * channels],
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn pixel(&self, y: usize, x: usize) -> &[f64] {
        let c = self.channels;
        &self.data[(y * self.width + x) * c..][..c]
    }

    pub fn pixel_mut(&mut self, y: usize, x: usize) -> &mut [f64] {
        let c = self.channels;
        &mut self.data[(y * self.width + x) * c..][..c]
    }

    pub fn same_dims(&self, other: &Image) -> bool {
        self.height == other.height && self.width == other.width
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::from_vec(&[self.height, self.width, self.channels], self.data.clone())
            .expect("image dims are valid")
    }

    /// Mirror image about the vertical axis.
    pub fn flip_horizontal(&self) -> Image {
        let mut out = self.clone();
        for y in 0..self.height {
            for x in 0..self.width {
                out.pixel_mut(y, x).copy_from_slice(self.pixel(y, self.width - 1 - x));
            }
        }
        out
    }

    /// Stacks images along the channel axis.
    pub fn concat_channels(images: &[&Image]) -> Result<Image> {
        let first = images
            .first()
            .ok_or_else(|| Error::contract("channel concat of zero images"))?;
        if images.iter().any(|im| !im.same_dims(first)) {
            return Err(Error::shape("channel concat of images with different H x W"));
        }
        let channels: usize = images.iter().map(|im| im.channels).sum();
        let mut data = Vec::with_capacity(first.height * first.width * channels);
        for p in 0..first.height * first.width {
            for im in images {
                data.extend_from_slice(&im.data[p * im.channels..(p + 1) * im.channels]);
            }
        }
        Image::new(first.height, first.width, channels, data)
    }

    /// Channels `start..start+len`.
    pub fn channel_slice(&self, start: usize, len: usize) -> Result<Image> {
        if len == 0 || start + len > self.channels {
            return Err(Error::shape(format!(
                "channel slice {start}..{} of {} channels",
                start + len,
                self.channels
            )));
        }
        let data = self
            .data
            .chunks(self.channels)
            .flat_map(|px| px[start..start + len].iter().copied())
            .collect();
        Image::new(self.height, self.width, len, data)
    }
}

/// Per-pixel body-part labels, `0` = background.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PartMask {
    height: usize,
    width: usize,
    labels: Vec<u8>,
}

/// Number of synthetic body parts: head, torso, arms, legs.
pub const NUM_PARTS: usize = 4;

impl PartMask {
    pub fn new(height: usize, width: usize, labels: Vec<u8>) -> Result<Self> {
        if labels.len() != height * width {
            return Err(Error::shape(format!(
                "mask {height}x{width} needs {} labels, got {}",
                height * width,
                labels.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l as usize > NUM_PARTS) {
            return Err(Error::contract(format!(
                "mask label {bad} exceeds the part count {NUM_PARTS}"
            )));
        }
        Ok(Self {
            height,
            width,
            labels,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn at(&self, y: usize, x: usize) -> u8 {
        self.labels[y * self.width + x]
    }

    pub fn contains_part(&self, part: u8) -> bool {
        self.labels.contains(&part)
    }

    pub fn present_parts(&self) -> Vec<u8> {
        (1..=NUM_PARTS as u8).filter(|&p| self.contains_part(p)).collect()
    }

    pub fn flip_horizontal(&self) -> PartMask {
        let labels = (0..self.height * self.width)
            .map(|i| self.at(i / self.width, self.width - 1 - i % self.width))
            .collect();
        PartMask {
            height: self.height,
            width: self.width,
            labels,
        }
    }

    /// Nearest-neighbor resample to `height x width`.
    pub fn downsample(&self, height: usize, width: usize) -> PartMask {
        let mut labels = Vec::with_capacity(height * width);
        for y in 0..height {
            let sy = ((2 * y + 1) * self.height / (2 * height)).min(self.height - 1);
            for x in 0..width {
                let sx = ((2 * x + 1) * self.width / (2 * width)).min(self.width - 1);
                labels.push(self.at(sy, sx));
            }
        }
        PartMask {
            height,
            width,
            labels,
        }
    }
}
