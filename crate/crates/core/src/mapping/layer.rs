//! Convolution layer descriptions and the plain-text layer table.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::mapping::MapError;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerDescriptor {
    pub name: String,
    pub c_in: u32,
    pub c_out: u32,
    pub kernel: u32,
    pub w_in: u32,
    pub h_in: u32,
    pub stride: u32,
    pub bytes_per_elem: u32,
}

impl LayerDescriptor {
    /// A `k x k` convolution with 8-bit activations.
    pub fn conv(name: &str, c_in: u32, c_out: u32, kernel: u32, w_in: u32, h_in: u32, stride: u32) -> Self {
        Self {
            name: name.to_string(),
            c_in,
            c_out,
            kernel,
            w_in,
            h_in,
            stride,
            bytes_per_elem: 1,
        }
    }

    /// 1x1 convolution over a `w x h` feature map.
    pub fn pointwise(name: &str, c_in: u32, c_out: u32, w: u32, h: u32) -> Self {
        Self::conv(name, c_in, c_out, 1, w, h, 1)
    }

    pub fn validate(&self) -> Result<(), MapError> {
        let fields = [
            ("c_in", self.c_in),
            ("c_out", self.c_out),
            ("kernel", self.kernel),
            ("w_in", self.w_in),
            ("h_in", self.h_in),
            ("stride", self.stride),
            ("bytes_per_elem", self.bytes_per_elem),
        ];
        for (f, v) in fields {
            if v == 0 {
                return Err(MapError::InvalidLayer(format!("{}: {f} must be positive", self.name)));
            }
        }
        if self.kernel > self.w_in || self.kernel > self.h_in {
            return Err(MapError::InvalidLayer(format!(
                "{}: kernel {} larger than the {}x{} input",
                self.name, self.kernel, self.w_in, self.h_in
            )));
        }
        Ok(())
    }

    pub fn w_out(&self) -> u32 {
        (self.w_in - self.kernel) / self.stride + 1
    }

    pub fn h_out(&self) -> u32 {
        (self.h_in - self.kernel) / self.stride + 1
    }

    pub fn out_pixels(&self) -> u64 {
        u64::from(self.w_out()) * u64::from(self.h_out())
    }

    /// Crossbar rows one output pixel needs (`c_in * k^2`).
    pub fn unrolled_in(&self) -> u64 {
        u64::from(self.c_in) * u64::from(self.kernel) * u64::from(self.kernel)
    }

    pub fn macs(&self) -> u64 {
        self.out_pixels() * self.unrolled_in() * u64::from(self.c_out)
    }

    /// Bytes of input a tile of `w` output pixels reads, halo included.
    pub fn in_tile_bytes(&self, w: u64) -> u64 {
        let e = u64::from(self.bytes_per_elem);
        if self.kernel == 1 {
            // Strided 1x1 layers still read only the sampled pixels.
            return w * u64::from(self.c_in) * e;
        }
        let k = u64::from(self.kernel);
        let span = (w.max(1) - 1) * u64::from(self.stride) + k;
        k * span * u64::from(self.c_in) * e
    }

    pub fn out_tile_bytes(&self, w: u64) -> u64 {
        w * u64::from(self.c_out) * u64::from(self.bytes_per_elem)
    }

    /// Input bytes that must cross the interconnect at least once.
    pub fn min_input_bytes(&self) -> u64 {
        let full = u64::from(self.w_in) * u64::from(self.h_in);
        let touched = self.out_pixels() * u64::from(self.kernel) * u64::from(self.kernel);
        full.min(touched) * u64::from(self.c_in) * u64::from(self.bytes_per_elem)
    }
}

impl fmt::Display for LayerDescriptor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} {} {} {} {} {} {}",
            self.name, self.c_in, self.c_out, self.kernel, self.w_in, self.h_in, self.stride
        )
    }
}

/// Crossbar tiles needed to hold the layer's weights.
pub fn tiles_required(layer: &LayerDescriptor, rows: u32, cols: u32) -> u64 {
    layer.unrolled_in().div_ceil(u64::from(rows)) * u64::from(layer.c_out).div_ceil(u64::from(cols))
}

/// Parses a layer table: one layer per line,
/// `name c_in c_out k w_in h_in stride`, separated by whitespace or
/// commas. `#` starts a comment.
pub fn parse_layer_table(text: &str) -> Result<Vec<LayerDescriptor>, MapError> {
    let mut layers = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let err = |message: String| MapError::Table { line: i + 1, message };
        let cols: Vec<&str> = line
            .split(|c: char| c == ',' || c.is_whitespace())
            .filter(|s| !s.is_empty())
            .collect();
        if cols.len() != 7 {
            return Err(err(format!("expected 7 fields, found {}", cols.len())));
        }
        let mut nums = [0u32; 6];
        for (k, s) in cols[1..].iter().enumerate() {
            nums[k] = u32::from_str(s).map_err(|e| err(format!("field {}: {e}", k + 2)))?;
        }
        let [c_in, c_out, k, w, h, s] = nums;
        let layer = LayerDescriptor::conv(cols[0], c_in, c_out, k, w, h, s);
        layer.validate().map_err(|e| err(e.to_string()))?;
        layers.push(layer);
    }
    if layers.is_empty() {
        return Err(MapError::Table {
            line: 0,
            message: "no layers".into(),
        });
    }
    Ok(layers)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tiles_required_examples() {
        assert_eq!(tiles_required(&LayerDescriptor::pointwise("a", 256, 256, 8, 8), 256, 256), 1);
        assert_eq!(tiles_required(&LayerDescriptor::pointwise("b", 512, 512, 8, 8), 256, 256), 4);
        assert_eq!(tiles_required(&LayerDescriptor::conv("c", 256, 256, 3, 8, 8, 1), 256, 256), 9);
    }

    #[test]
    fn output_geometry() {
        let l = LayerDescriptor::conv("c", 3, 64, 7, 224, 224, 2);
        assert_eq!((l.w_out(), l.h_out()), (109, 109));
        assert_eq!(l.macs(), 109 * 109 * 3 * 49 * 64);
        assert_eq!(l.in_tile_bytes(1), 7 * 7 * 3);
    }

    #[test]
    fn table_round_trip() {
        let text = "# resnet head\nconv1, 3, 64, 7, 224, 224, 2\n\nres2a 64 256 1 56 56 1 # tail\n";
        let l = parse_layer_table(text).unwrap();
        assert_eq!(l.len(), 2);
        assert_eq!(l[1], LayerDescriptor::pointwise("res2a", 64, 256, 56, 56));
        let again = parse_layer_table(&l.iter().map(|x| format!("{x}\n")).collect::<String>()).unwrap();
        assert_eq!(again, l);
    }

    #[test]
    fn table_errors_name_the_line() {
        match parse_layer_table("a 1 2 1 4 4 1\nb 1 2 x 4 4 1\n") {
            Err(MapError::Table { line: 2, .. }) => {}
            other => panic!("{other:?}"),
        }
        assert!(parse_layer_table("a 1 2 1 4 4\n").is_err());
        assert!(parse_layer_table("a 1 2 5 4 4 1\n").is_err());
        assert!(parse_layer_table("# nothing\n").is_err());
    }
}
