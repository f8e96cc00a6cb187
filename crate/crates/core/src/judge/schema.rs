//! A small structural schema language for judge responses.

use serde_json::{json, Value};

#[derive(Debug, Clone, PartialEq)]
pub enum Schema {
    Any,
    String,
    Integer {
        min: Option<i64>,
        max: Option<i64>,
    },
    Number,
    Bool,
    Enum(Vec<String>),
    Array {
        items: Box<Schema>,
        min_items: usize,
    },
    Object(Vec<Field>),
    Nullable(Box<Schema>),
    AnyOf(Vec<Schema>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Field {
    pub name: String,
    pub schema: Schema,
    pub required: bool,
}

impl Field {
    pub fn required(name: &str, schema: Schema) -> Self {
        Field {
            name: name.to_string(),
            schema,
            required: true,
        }
    }

    pub fn optional(name: &str, schema: Schema) -> Self {
        Field {
            name: name.to_string(),
            schema,
            required: false,
        }
    }
}

impl Schema {
    pub fn int_range(min: i64, max: i64) -> Self {
        Schema::Integer {
            min: Some(min),
            max: Some(max),
        }
    }

    pub fn array(items: Schema) -> Self {
        Schema::Array {
            items: Box::new(items),
            min_items: 0,
        }
    }

    pub fn nullable(inner: Schema) -> Self {
        Schema::Nullable(Box::new(inner))
    }

    pub fn enumeration<S: AsRef<str>>(values: &[S]) -> Self {
        Schema::Enum(values.iter().map(|v| v.as_ref().to_string()).collect())
    }

    /// Checks `value`, returning the JSON path and reason of the first violation.
    pub fn validate(&self, value: &Value) -> Result<(), String> {
        self.check(value, "$")
    }

    fn check(&self, value: &Value, path: &str) -> Result<(), String> {
        match self {
            Schema::Any => Ok(()),
            Schema::String => value
                .is_string()
                .then_some(())
                .ok_or_else(|| format!("{path}: expected string")),
            Schema::Number => value
                .is_number()
                .then_some(())
                .ok_or_else(|| format!("{path}: expected number")),
            Schema::Bool => value
                .is_boolean()
                .then_some(())
                .ok_or_else(|| format!("{path}: expected boolean")),
            Schema::Integer { min, max } => {
                let n = value
                    .as_i64()
                    .or_else(|| {
                        value
                            .as_f64()
                            .filter(|f| f.fract() == 0.0)
                            .map(|f| f as i64)
                    })
                    .ok_or_else(|| format!("{path}: expected integer"))?;
                if min.is_some_and(|m| n < m) || max.is_some_and(|m| n > m) {
                    return Err(format!(
                        "{path}: {n} outside [{}, {}]",
                        min.map_or("-inf".into(), |m| m.to_string()),
                        max.map_or("inf".into(), |m| m.to_string())
                    ));
                }
                Ok(())
            }
            Schema::Enum(allowed) => {
                let s = value
                    .as_str()
                    .ok_or_else(|| format!("{path}: expected string"))?;
                if allowed.iter().any(|a| a == s) {
                    Ok(())
                } else {
                    Err(format!("{path}: `{s}` not one of {allowed:?}"))
                }
            }
            Schema::Array { items, min_items } => {
                let arr = value
                    .as_array()
                    .ok_or_else(|| format!("{path}: expected array"))?;
                if arr.len() < *min_items {
                    return Err(format!(
                        "{path}: expected at least {min_items} items, got {}",
                        arr.len()
                    ));
                }
                for (i, v) in arr.iter().enumerate() {
                    items.check(v, &format!("{path}[{i}]"))?;
                }
                Ok(())
            }
            Schema::Object(fields) => {
                let obj = value
                    .as_object()
                    .ok_or_else(|| format!("{path}: expected object"))?;
                for f in fields {
                    match obj.get(&f.name) {
                        Some(v) => f.schema.check(v, &format!("{path}.{}", f.name))?,
                        None if f.required => {
                            return Err(format!("{path}: missing field `{}`", f.name))
                        }
                        None => {}
                    }
                }
                Ok(())
            }
            Schema::Nullable(inner) => {
                if value.is_null() {
                    Ok(())
                } else {
                    inner.check(value, path)
                }
            }
            Schema::AnyOf(options) => {
                let mut reasons = Vec::new();
                for o in options {
                    match o.check(value, path) {
                        Ok(()) => return Ok(()),
                        Err(e) => reasons.push(e),
                    }
                }
                Err(reasons.join(" | "))
            }
        }
    }

    /// JSON-schema-flavoured description, embedded in prompts and cache keys.
    pub fn describe(&self) -> Value {
        match self {
            Schema::Any => json!({}),
            Schema::String => json!({"type": "string"}),
            Schema::Number => json!({"type": "number"}),
            Schema::Bool => json!({"type": "boolean"}),
            Schema::Integer { min, max } => {
                let mut v = json!({"type": "integer"});
                if let Some(m) = min {
                    v["minimum"] = json!(m);
                }
                if let Some(m) = max {
                    v["maximum"] = json!(m);
                }
                v
            }
            Schema::Enum(values) => json!({"enum": values}),
            Schema::Array { items, min_items } => {
                let mut v = json!({"type": "array", "items": items.describe()});
                if *min_items > 0 {
                    v["minItems"] = json!(min_items);
                }
                v
            }
            Schema::Object(fields) => {
                let props: serde_json::Map<String, Value> = fields
                    .iter()
                    .map(|f| (f.name.clone(), f.schema.describe()))
                    .collect();
                let required: Vec<&str> = fields
                    .iter()
                    .filter(|f| f.required)
                    .map(|f| f.name.as_str())
                    .collect();
                json!({"type": "object", "properties": props, "required": required})
            }
            Schema::Nullable(inner) => json!({"anyOf": [inner.describe(), {"type": "null"}]}),
            Schema::AnyOf(options) => {
                json!({"anyOf": options.iter().map(Schema::describe).collect::<Vec<_>>()})
            }
        }
    }
}

/// Pulls a JSON value out of model output: plain JSON, a fenced code block, or the
/// outermost bracketed span.
pub fn extract_json(raw: &str) -> Result<Value, String> {
    let trimmed = raw.trim();
    if let Ok(v) = serde_json::from_str(trimmed) {
        return Ok(v);
    }
    if let Some(start) = trimmed.find("```") {
        let after = &trimmed[start + 3..];
        let body_start = after.find('\n').map_or(0, |i| i + 1);
        if let Some(end) = after[body_start..].find("```") {
            if let Ok(v) = serde_json::from_str(after[body_start..body_start + end].trim()) {
                return Ok(v);
            }
        }
    }
    let open = trimmed.find(['{', '[']);
    let close = trimmed.rfind(['}', ']']);
    if let (Some(o), Some(c)) = (open, close) {
        if o < c {
            if let Ok(v) = serde_json::from_str(&trimmed[o..=c]) {
                return Ok(v);
            }
        }
    }
    Err("response does not contain a JSON value".to_string())
}
