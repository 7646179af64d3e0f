use serde::de::DeserializeOwned;

use crate::error::{Error, Result};

/// Deserializes JSON, reporting the failing field path and position.
pub(crate) fn from_str<T: DeserializeOwned>(text: &str, file: &str) -> Result<T> {
    let de = &mut serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        let inner = e.into_inner();
        Error::Parse {
            file: file.to_string(),
            path,
            line: inner.line(),
            column: inner.column(),
            message: inner.to_string(),
        }
    })
}
