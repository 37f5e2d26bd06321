//! Flat `key = value` text configuration, one entry per line; `#` starts a
//! comment.

use std::collections::BTreeMap;
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Default, PartialEq)]
pub struct KeyValues {
    map: BTreeMap<String, String>,
}

impl KeyValues {
    pub fn parse(text: &str) -> Result<Self> {
        let mut map = BTreeMap::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap().trim();
            if line.is_empty() {
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                return Err(Error::format("config", format!("line {}: expected `key = value`", n + 1)));
            };
            let (k, v) = (k.trim(), v.trim());
            if k.is_empty() {
                return Err(Error::format("config", format!("line {}: empty key", n + 1)));
            }
            if map.insert(k.to_string(), v.to_string()).is_some() {
                return Err(Error::format("config", format!("line {}: duplicate key {k}", n + 1)));
            }
        }
        Ok(KeyValues { map })
    }

    pub fn set(&mut self, key: &str, value: impl ToString) {
        self.map.insert(key.to_string(), value.to_string());
    }

    pub fn get_str(&self, key: &str) -> Option<&str> {
        self.map.get(key).map(String::as_str)
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.map.keys().map(String::as_str)
    }

    pub fn merge(&mut self, other: &KeyValues) {
        for (k, v) in &other.map {
            self.map.insert(k.clone(), v.clone());
        }
    }

    /// Parses `key` if present, leaving `slot` untouched otherwise.
    pub fn read<T: FromStr>(&self, key: &str, slot: &mut T) -> Result<()> {
        if let Some(v) = self.map.get(key) {
            *slot = parse_value(key, v)?;
        }
        Ok(())
    }

    pub fn read_list<T: FromStr>(&self, key: &str, slot: &mut Vec<T>) -> Result<()> {
        if let Some(v) = self.map.get(key) {
            *slot = if v.is_empty() {
                Vec::new()
            } else {
                v.split(',').map(|p| parse_value(key, p.trim())).collect::<Result<_>>()?
            };
        }
        Ok(())
    }

    /// Fails on any key outside `known`.
    pub fn check_known(&self, known: &[&str]) -> Result<()> {
        match self.map.keys().find(|k| !known.contains(&k.as_str())) {
            Some(k) => Err(Error::config(format!("unknown config key {k:?}"))),
            None => Ok(()),
        }
    }

    pub fn to_text(&self) -> String {
        self.map.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }
}

fn parse_value<T: FromStr>(key: &str, v: &str) -> Result<T> {
    // accept 0/1 for booleans as well as true/false
    let v = match v {
        "1" if std::any::type_name::<T>() == "bool" => "true",
        "0" if std::any::type_name::<T>() == "bool" => "false",
        other => other,
    };
    v.parse().map_err(|_| Error::config(format!("bad value {v:?} for {key}")))
}

pub(crate) fn join<T: ToString>(xs: &[T]) -> String {
    xs.iter().map(ToString::to_string).collect::<Vec<_>>().join(",")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_read_print() {
        let kv = KeyValues::parse("# comment\nwindow = 12\nchannels = 4, 8\nno_3d = 1\n\n").unwrap();
        let (mut w, mut c, mut n) = (0usize, Vec::<usize>::new(), false);
        kv.read("window", &mut w).unwrap();
        kv.read_list("channels", &mut c).unwrap();
        kv.read("no_3d", &mut n).unwrap();
        assert_eq!((w, c, n), (12, vec![4, 8], true));
        assert_eq!(KeyValues::parse(&kv.to_text()).unwrap(), kv);
        assert!(kv.check_known(&["window", "channels"]).is_err());
    }

    #[test]
    fn errors() {
        assert!(KeyValues::parse("novalue\n").is_err());
        assert!(KeyValues::parse("a = 1\na = 2\n").is_err());
        let kv = KeyValues::parse("a = x").unwrap();
        let mut v = 0usize;
        assert!(kv.read("a", &mut v).is_err());
    }
}
