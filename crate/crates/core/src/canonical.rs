//! Canonical JSON: object keys sorted, no insignificant whitespace.

use serde::Serialize;

/// Serializes through `serde_json::Value`, whose maps are ordered by key.
pub fn to_string<T: Serialize + ?Sized>(value: &T) -> String {
    let tree = serde_json::to_value(value).expect("serializable value");
    serde_json::to_string(&tree).expect("json value serializes")
}
