//! JSON has no infinities or NaN. These helpers write non-finite reals as
//! the strings `"inf"`, `"-inf"` and `"NaN"` and read them back.

use serde::{Deserialize, Deserializer, Serialize, Serializer};

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum Repr<'a> {
    Num(f64),
    Text(&'a str),
}

fn to_repr(v: f64) -> Repr<'static> {
    if v.is_finite() {
        Repr::Num(v)
    } else if v.is_nan() {
        Repr::Text("NaN")
    } else if v > 0.0 {
        Repr::Text("inf")
    } else {
        Repr::Text("-inf")
    }
}

fn from_repr<E: serde::de::Error>(r: Repr<'_>) -> Result<f64, E> {
    match r {
        Repr::Num(v) => Ok(v),
        Repr::Text("NaN") => Ok(f64::NAN),
        Repr::Text("inf") => Ok(f64::INFINITY),
        Repr::Text("-inf") => Ok(f64::NEG_INFINITY),
        Repr::Text(other) => Err(E::custom(format!("expected a number, `inf`, `-inf` or `NaN`, got `{other}`"))),
    }
}

pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
    to_repr(*v).serialize(s)
}

pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
    from_repr(Repr::deserialize(d)?)
}

pub mod option {
    use super::*;

    pub fn serialize<S: Serializer>(v: &Option<f64>, s: S) -> Result<S::Ok, S::Error> {
        v.map(to_repr).serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<f64>, D::Error> {
        Option::<Repr>::deserialize(d)?.map(from_repr).transpose()
    }
}

#[cfg(test)]
mod tests {
    use serde::{Deserialize, Serialize};

    #[derive(Serialize, Deserialize)]
    struct Holder {
        #[serde(with = "super")]
        v: f64,
        #[serde(with = "super::option")]
        o: Option<f64>,
    }

    #[test]
    fn non_finite_values_roundtrip() {
        for v in [1.5, f64::INFINITY, f64::NEG_INFINITY, f64::NAN] {
            let text = serde_json::to_string(&Holder { v, o: Some(v) }).unwrap();
            let back: Holder = serde_json::from_str(&text).unwrap();
            assert_eq!(back.v.to_bits(), v.to_bits(), "{text}");
            assert_eq!(back.o.map(f64::to_bits), Some(v.to_bits()));
        }
        let back: Holder = serde_json::from_str(r#"{"v": "inf", "o": null}"#).unwrap();
        assert_eq!(back.o, None);
        assert!(serde_json::from_str::<Holder>(r#"{"v": "huge", "o": null}"#).is_err());
    }
}
