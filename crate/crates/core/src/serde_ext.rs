//! JSON encoding that keeps non-finite floats.
//!
//! Finite values are plain numbers; `+∞`, `−∞` and NaN become the strings
//! `"inf"`, `"-inf"` and `"nan"`. Use on a field with
//! `#[serde(with = "crate::serde_ext")]`; options, vectors, pairs and maps of
//! floats are covered.

use std::collections::BTreeMap;
use std::fmt;

use serde::de::{self, DeserializeOwned, Visitor};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

#[derive(Debug, Clone, Copy)]
pub struct Num(pub f64);

impl Serialize for Num {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        let v = self.0;
        if v.is_finite() {
            s.serialize_f64(v)
        } else if v.is_nan() {
            s.serialize_str("nan")
        } else if v > 0.0 {
            s.serialize_str("inf")
        } else {
            s.serialize_str("-inf")
        }
    }
}

struct NumVisitor;

impl Visitor<'_> for NumVisitor {
    type Value = Num;

    fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
        f.write_str("a number or one of \"inf\", \"-inf\", \"nan\"")
    }

    fn visit_f64<E: de::Error>(self, v: f64) -> Result<Num, E> {
        Ok(Num(v))
    }

    fn visit_i64<E: de::Error>(self, v: i64) -> Result<Num, E> {
        Ok(Num(v as f64))
    }

    fn visit_u64<E: de::Error>(self, v: u64) -> Result<Num, E> {
        Ok(Num(v as f64))
    }

    fn visit_str<E: de::Error>(self, v: &str) -> Result<Num, E> {
        match v {
            "inf" => Ok(Num(f64::INFINITY)),
            "-inf" => Ok(Num(f64::NEG_INFINITY)),
            "nan" => Ok(Num(f64::NAN)),
            _ => Err(E::invalid_value(de::Unexpected::Str(v), &self)),
        }
    }
}

impl<'de> Deserialize<'de> for Num {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        d.deserialize_any(NumVisitor)
    }
}

/// Types whose floats are carried through [`Num`].
pub trait Extended: Sized {
    type Repr: Serialize + DeserializeOwned;
    fn to_repr(&self) -> Self::Repr;
    fn from_repr(repr: Self::Repr) -> Self;
}

impl Extended for f64 {
    type Repr = Num;
    fn to_repr(&self) -> Num {
        Num(*self)
    }
    fn from_repr(repr: Num) -> Self {
        repr.0
    }
}

impl Extended for usize {
    type Repr = usize;
    fn to_repr(&self) -> usize {
        *self
    }
    fn from_repr(repr: usize) -> Self {
        repr
    }
}

impl<T: Extended> Extended for Option<T> {
    type Repr = Option<T::Repr>;
    fn to_repr(&self) -> Self::Repr {
        self.as_ref().map(T::to_repr)
    }
    fn from_repr(repr: Self::Repr) -> Self {
        repr.map(T::from_repr)
    }
}

impl<T: Extended> Extended for Vec<T> {
    type Repr = Vec<T::Repr>;
    fn to_repr(&self) -> Self::Repr {
        self.iter().map(T::to_repr).collect()
    }
    fn from_repr(repr: Self::Repr) -> Self {
        repr.into_iter().map(T::from_repr).collect()
    }
}

impl<A: Extended, B: Extended> Extended for (A, B) {
    type Repr = (A::Repr, B::Repr);
    fn to_repr(&self) -> Self::Repr {
        (self.0.to_repr(), self.1.to_repr())
    }
    fn from_repr(repr: Self::Repr) -> Self {
        (A::from_repr(repr.0), B::from_repr(repr.1))
    }
}

impl<A: Extended, B: Extended, C: Extended> Extended for (A, B, C) {
    type Repr = (A::Repr, B::Repr, C::Repr);
    fn to_repr(&self) -> Self::Repr {
        (self.0.to_repr(), self.1.to_repr(), self.2.to_repr())
    }
    fn from_repr(repr: Self::Repr) -> Self {
        (A::from_repr(repr.0), B::from_repr(repr.1), C::from_repr(repr.2))
    }
}

impl<T: Extended> Extended for BTreeMap<String, T> {
    type Repr = BTreeMap<String, T::Repr>;
    fn to_repr(&self) -> Self::Repr {
        self.iter().map(|(k, v)| (k.clone(), v.to_repr())).collect()
    }
    fn from_repr(repr: Self::Repr) -> Self {
        repr.into_iter().map(|(k, v)| (k, T::from_repr(v))).collect()
    }
}

pub fn serialize<T: Extended, S: Serializer>(value: &T, s: S) -> Result<S::Ok, S::Error> {
    value.to_repr().serialize(s)
}

pub fn deserialize<'de, T: Extended, D: Deserializer<'de>>(d: D) -> Result<T, D::Error> {
    T::Repr::deserialize(d).map(T::from_repr)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[derive(Debug, Serialize, Deserialize)]
    struct Probe {
        #[serde(with = "crate::serde_ext")]
        x: f64,
        #[serde(with = "crate::serde_ext")]
        v: Vec<Option<f64>>,
        #[serde(with = "crate::serde_ext")]
        m: BTreeMap<String, f64>,
        #[serde(with = "crate::serde_ext")]
        p: Vec<(usize, f64)>,
    }

    #[test]
    fn non_finite_values_round_trip() {
        let probe = Probe {
            x: f64::INFINITY,
            v: vec![Some(1.5), None, Some(f64::NEG_INFINITY), Some(f64::NAN)],
            m: BTreeMap::from([("a".to_string(), 2.0), ("b".to_string(), f64::INFINITY)]),
            p: vec![(3, f64::INFINITY)],
        };
        let text = serde_json::to_string(&probe).unwrap();
        assert_eq!(
            text,
            r#"{"x":"inf","v":[1.5,null,"-inf","nan"],"m":{"a":2.0,"b":"inf"},"p":[[3,"inf"]]}"#
        );
        let back: Probe = serde_json::from_str(&text).unwrap();
        assert_eq!(back.x, f64::INFINITY);
        assert!(back.v[3].unwrap().is_nan());
        assert_eq!(back.m["b"], f64::INFINITY);
        assert_eq!(serde_json::to_string(&back).unwrap(), text);
    }

    #[test]
    fn integers_and_bad_strings() {
        let back: Probe = serde_json::from_str(r#"{"x":3,"v":[],"m":{},"p":[]}"#).unwrap();
        assert_eq!(back.x, 3.0);
        assert!(serde_json::from_str::<Probe>(r#"{"x":"infinity","v":[],"m":{},"p":[]}"#).is_err());
    }
}
