//! The striped color image: one valid channel per column.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Channel {
    R,
    G,
    B,
}

impl Channel {
    pub const ALL: [Channel; 3] = [Channel::R, Channel::G, Channel::B];

    /// Index into an RGB triple.
    pub fn index(self) -> usize {
        match self {
            Channel::R => 0,
            Channel::G => 1,
            Channel::B => 2,
        }
    }
}

/// Left-to-right placement of the three color bands within a lenticule.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ChannelOrder([Channel; 3]);

impl ChannelOrder {
    pub const RGB: ChannelOrder = ChannelOrder([Channel::R, Channel::G, Channel::B]);

    pub fn new(order: [Channel; 3]) -> Result<Self> {
        let mut seen = [false; 3];
        for c in order {
            if std::mem::replace(&mut seen[c.index()], true) {
                return Err(Error::Config(format!(
                    "channel order {order:?} is not a permutation of R, G, B"
                )));
            }
        }
        Ok(Self(order))
    }

    /// Channel carried by band `slot` (0 = leftmost).
    #[inline]
    pub fn channel_at(self, slot: usize) -> Channel {
        self.0[slot]
    }

    /// Band position of `channel`.
    #[inline]
    pub fn slot_of(self, channel: Channel) -> usize {
        self.0
            .iter()
            .position(|&c| c == channel)
            .expect("order is a permutation")
    }

    pub fn channels(self) -> [Channel; 3] {
        self.0
    }
}

impl Default for ChannelOrder {
    fn default() -> Self {
        Self::RGB
    }
}

impl fmt::Display for ChannelOrder {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for c in self.0 {
            write!(f, "{c:?}")?;
        }
        Ok(())
    }
}

impl FromStr for ChannelOrder {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let letters: Vec<char> = s
            .chars()
            .filter(|c| c.is_ascii_alphabetic())
            .map(|c| c.to_ascii_uppercase())
            .collect();
        if letters.len() != 3 {
            return Err(Error::Config(format!("channel order {s:?} needs three letters")));
        }
        let mut order = [Channel::R; 3];
        for (slot, l) in letters.into_iter().enumerate() {
            order[slot] = match l {
                'R' => Channel::R,
                'G' => Channel::G,
                'B' => Channel::B,
                _ => return Err(Error::Config(format!("unknown channel {l:?} in {s:?}"))),
            };
        }
        Self::new(order)
    }
}

impl Serialize for ChannelOrder {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for ChannelOrder {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// `height` x `3 (M - 1)` samples; column `c` holds the channel in band
/// `c mod 3` of lenticule `c / 3`.
#[derive(Debug, Clone, PartialEq)]
pub struct StripeImage {
    height: usize,
    width: usize,
    order: ChannelOrder,
    data: Vec<f64>,
}

impl StripeImage {
    pub fn new(height: usize, width: usize, order: ChannelOrder, data: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 || width % 3 != 0 {
            return Err(Error::BadDimensions {
                height,
                width,
                reason: "stripe width must be a positive multiple of 3",
            });
        }
        if data.len() != height * width {
            return Err(Error::Malformed(format!(
                "stripe {height}x{width} needs {} samples, got {}",
                height * width,
                data.len()
            )));
        }
        for (index, &v) in data.iter().enumerate() {
            if !v.is_finite() {
                return Err(Error::NonFiniteValue { index });
            }
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::RangeViolation { index, value: v });
            }
        }
        Ok(Self {
            height,
            width,
            order,
            data,
        })
    }

    pub fn from_fn(
        height: usize,
        width: usize,
        order: ChannelOrder,
        mut f: impl FnMut(usize, usize) -> f64,
    ) -> Result<Self> {
        let mut data = Vec::with_capacity(height * width);
        for h in 0..height {
            for c in 0..width {
                data.push(f(h, c));
            }
        }
        Self::new(height, width, order, data)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    /// Number of complete lenticules, `M - 1`.
    pub fn lenticules(&self) -> usize {
        self.width / 3
    }

    pub fn order(&self) -> ChannelOrder {
        self.order
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn get(&self, h: usize, c: usize) -> f64 {
        self.data[h * self.width + c]
    }

    pub fn row(&self, h: usize) -> &[f64] {
        &self.data[h * self.width..(h + 1) * self.width]
    }

    /// Channel valid in column `c`.
    #[inline]
    pub fn channel_of(&self, c: usize) -> Channel {
        self.order.channel_at(c % 3)
    }

    pub fn column(&self, c: usize) -> Vec<f64> {
        (0..self.height).map(|h| self.get(h, c)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_orders() {
        assert_eq!("RGB".parse::<ChannelOrder>().unwrap(), ChannelOrder::RGB);
        let bgr: ChannelOrder = "b,g,r".parse().unwrap();
        assert_eq!(bgr.channel_at(0), Channel::B);
        assert_eq!(bgr.slot_of(Channel::R), 2);
        assert!("RRB".parse::<ChannelOrder>().is_err());
        assert!("RG".parse::<ChannelOrder>().is_err());
    }

    #[test]
    fn column_channels_follow_order() {
        let s = StripeImage::from_fn(2, 6, "GBR".parse().unwrap(), |_, _| 0.5).unwrap();
        let got: Vec<Channel> = (0..6).map(|c| s.channel_of(c)).collect();
        assert_eq!(
            got,
            [Channel::G, Channel::B, Channel::R, Channel::G, Channel::B, Channel::R]
        );
        assert_eq!(s.lenticules(), 2);
    }

    #[test]
    fn rejects_bad_width() {
        assert!(StripeImage::new(2, 4, ChannelOrder::RGB, vec![0.0; 8]).is_err());
    }
}
