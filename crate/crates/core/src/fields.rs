//! Path-aware field access over `serde_json` values.
//!
//! serde's derive errors are strings; callers here need to report *which*
//! field was missing or mistyped, so documents are walked by hand.

use serde_json::{Map, Value};

#[derive(Debug, Clone, PartialEq, Eq)]
pub(crate) enum FieldError {
    Missing(String),
    WrongType(String),
}

pub(crate) type FieldResult<T> = Result<T, FieldError>;

/// A JSON object together with its path from the document root.
pub(crate) struct Fields<'a> {
    map: &'a Map<String, Value>,
    path: String,
}

impl<'a> Fields<'a> {
    pub(crate) fn root(value: &'a Value) -> FieldResult<Self> {
        Self::at(value, String::new())
    }

    pub(crate) fn at(value: &'a Value, path: String) -> FieldResult<Self> {
        match value {
            Value::Object(map) => Ok(Self { map, path }),
            _ => Err(FieldError::WrongType(if path.is_empty() { "$".into() } else { path })),
        }
    }

    pub(crate) fn path_of(&self, key: &str) -> String {
        if self.path.is_empty() {
            key.to_string()
        } else {
            format!("{}.{key}", self.path)
        }
    }

    pub(crate) fn opt(&self, key: &str) -> Option<&'a Value> {
        match self.map.get(key) {
            None | Some(Value::Null) => None,
            Some(v) => Some(v),
        }
    }

    pub(crate) fn req(&self, key: &str) -> FieldResult<&'a Value> {
        self.opt(key).ok_or_else(|| FieldError::Missing(self.path_of(key)))
    }

    fn wrong(&self, key: &str) -> FieldError {
        FieldError::WrongType(self.path_of(key))
    }

    pub(crate) fn i64(&self, key: &str) -> FieldResult<i64> {
        self.req(key)?.as_i64().ok_or_else(|| self.wrong(key))
    }

    pub(crate) fn opt_i64(&self, key: &str) -> FieldResult<Option<i64>> {
        self.opt(key).map(|v| v.as_i64().ok_or_else(|| self.wrong(key))).transpose()
    }

    pub(crate) fn f64(&self, key: &str) -> FieldResult<f64> {
        self.req(key)?.as_f64().ok_or_else(|| self.wrong(key))
    }

    pub(crate) fn opt_f64(&self, key: &str) -> FieldResult<Option<f64>> {
        self.opt(key).map(|v| v.as_f64().ok_or_else(|| self.wrong(key))).transpose()
    }

    pub(crate) fn str(&self, key: &str) -> FieldResult<&'a str> {
        self.req(key)?.as_str().ok_or_else(|| self.wrong(key))
    }

    pub(crate) fn opt_str(&self, key: &str) -> FieldResult<Option<&'a str>> {
        self.opt(key).map(|v| v.as_str().ok_or_else(|| self.wrong(key))).transpose()
    }

    pub(crate) fn obj(&self, key: &str) -> FieldResult<Fields<'a>> {
        Fields::at(self.req(key)?, self.path_of(key))
    }

    pub(crate) fn opt_obj(&self, key: &str) -> FieldResult<Option<Fields<'a>>> {
        self.opt(key).map(|v| Fields::at(v, self.path_of(key))).transpose()
    }

    pub(crate) fn array(&self, key: &str) -> FieldResult<&'a [Value]> {
        self.req(key)?.as_array().map(Vec::as_slice).ok_or_else(|| self.wrong(key))
    }

    pub(crate) fn opt_array(&self, key: &str) -> FieldResult<Option<&'a [Value]>> {
        self.opt(key)
            .map(|v| v.as_array().map(Vec::as_slice).ok_or_else(|| self.wrong(key)))
            .transpose()
    }

    /// Iterates the objects of an array field, each with an indexed path.
    pub(crate) fn objects(&self, key: &str) -> FieldResult<Vec<Fields<'a>>> {
        let path = self.path_of(key);
        self.array(key)?
            .iter()
            .enumerate()
            .map(|(i, v)| Fields::at(v, format!("{path}[{i}]")))
            .collect()
    }

    pub(crate) fn strings(&self, key: &str) -> FieldResult<Vec<String>> {
        let Some(items) = self.opt_array(key)? else {
            return Ok(Vec::new());
        };
        items
            .iter()
            .map(|v| v.as_str().map(str::to_string).ok_or_else(|| self.wrong(key)))
            .collect()
    }
}
