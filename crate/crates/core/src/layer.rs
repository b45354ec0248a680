use std::fmt;

/// The four breast anatomy layers, top to bottom.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
#[repr(u8)]
pub enum Layer {
    Skin = 1,
    Fat = 2,
    Mammary = 3,
    Muscle = 4,
}

impl Layer {
    pub const ALL: [Layer; 4] = [Layer::Skin, Layer::Fat, Layer::Mammary, Layer::Muscle];

    /// Zero-based position, for indexing per-class arrays.
    pub fn index(self) -> usize {
        self as usize - 1
    }

    pub fn from_index(i: usize) -> Option<Layer> {
        Self::ALL.get(i).copied()
    }

    /// Parses the 1-based class code used in label files.
    pub fn from_code(code: u32) -> Option<Layer> {
        code.checked_sub(1).and_then(|i| Self::from_index(i as usize))
    }

    pub fn code(self) -> u8 {
        self as u8
    }
}

impl fmt::Display for Layer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            Layer::Skin => "skin",
            Layer::Fat => "fat",
            Layer::Mammary => "mammary",
            Layer::Muscle => "muscle",
        };
        f.write_str(name)
    }
}
