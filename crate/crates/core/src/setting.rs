use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

/// One of the three measurement settings `{0, 1, 2}` available on each side.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Setting(u8);

impl Setting {
    pub const ALL: [Setting; 3] = [Setting(0), Setting(1), Setting(2)];

    pub fn new(x: u8) -> Result<Self> {
        if x < 3 {
            Ok(Setting(x))
        } else {
            Err(Error::domain(format!("setting {x} is not in {{0,1,2}}")))
        }
    }

    pub fn index(self) -> usize {
        self.0 as usize
    }

    pub fn value(self) -> u8 {
        self.0
    }
}

impl fmt::Display for Setting {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl Serialize for Setting {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_u8(self.0)
    }
}

impl<'de> Deserialize<'de> for Setting {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let x = u8::deserialize(d)?;
        Setting::new(x).map_err(serde::de::Error::custom)
    }
}

/// Joint setting `(x1, x2)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct SettingPair {
    pub x1: Setting,
    pub x2: Setting,
}

impl SettingPair {
    pub fn new(x1: u8, x2: u8) -> Result<Self> {
        Ok(SettingPair {
            x1: Setting::new(x1)?,
            x2: Setting::new(x2)?,
        })
    }

    /// All nine pairs, `x1` major.
    pub fn all() -> impl Iterator<Item = SettingPair> {
        Setting::ALL.into_iter().flat_map(|x1| {
            Setting::ALL
                .into_iter()
                .map(move |x2| SettingPair { x1, x2 })
        })
    }

    /// The four pairs entering the Bell statistic: (1,2), (0,2), (1,0), (0,0).
    pub fn statistic_pairs() -> [SettingPair; 4] {
        [
            SettingPair {
                x1: Setting(1),
                x2: Setting(2),
            },
            SettingPair {
                x1: Setting(0),
                x2: Setting(2),
            },
            SettingPair {
                x1: Setting(1),
                x2: Setting(0),
            },
            SettingPair {
                x1: Setting(0),
                x2: Setting(0),
            },
        ]
    }
}

impl fmt::Display for SettingPair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({},{})", self.x1, self.x2)
    }
}

/// Binary spin outcome, `+1` (up) or `-1` (down).
///
/// Serialized as the integers `1` / `-1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Spin {
    Down,
    Up,
}

impl Spin {
    pub fn value(self) -> i8 {
        match self {
            Spin::Up => 1,
            Spin::Down => -1,
        }
    }

    pub fn from_value(v: i64) -> Result<Self> {
        match v {
            1 => Ok(Spin::Up),
            -1 => Ok(Spin::Down),
            _ => Err(Error::domain(format!("spin must be +1 or -1, got {v}"))),
        }
    }

    pub fn from_bit(bit: bool) -> Self {
        if bit {
            Spin::Up
        } else {
            Spin::Down
        }
    }

    pub fn bit(self) -> bool {
        self == Spin::Up
    }

    pub fn flip(self) -> Self {
        match self {
            Spin::Up => Spin::Down,
            Spin::Down => Spin::Up,
        }
    }
}

impl std::ops::Neg for Spin {
    type Output = Spin;
    fn neg(self) -> Spin {
        self.flip()
    }
}

impl fmt::Display for Spin {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Spin::Up => "+1",
            Spin::Down => "-1",
        })
    }
}

impl Serialize for Spin {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_i8(self.value())
    }
}

impl<'de> Deserialize<'de> for Spin {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let v = i64::deserialize(d)?;
        Spin::from_value(v).map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn setting_range() {
        assert!(Setting::new(2).is_ok());
        assert!(matches!(Setting::new(3), Err(Error::Domain(_))));
    }

    #[test]
    fn pairs() {
        assert_eq!(SettingPair::all().count(), 9);
        let first = SettingPair::statistic_pairs()[0];
        assert_eq!((first.x1.value(), first.x2.value()), (1, 2));
    }

    #[test]
    fn spin_serde() {
        let v: Vec<Spin> = serde_json::from_str("[1,-1]").unwrap();
        assert_eq!(v, vec![Spin::Up, Spin::Down]);
        assert!(serde_json::from_str::<Spin>("0").is_err());
        assert_eq!(serde_json::to_string(&-Spin::Up).unwrap(), "-1");
    }
}
