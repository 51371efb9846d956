use serde_json::{json, Value};

fn error_responses(codes: &[&str]) -> Value {
    let mut out = serde_json::Map::new();
    for code in codes {
        let text = match *code {
            "404" => "unknown session",
            "409" => "session not ready, or fit numerically degenerate",
            "413" => "dataset over 100000 rows or 2000 features",
            "422" => "malformed input or parameter out of range",
            _ => "error",
        };
        out.insert(
            code.to_string(),
            json!({"description": text, "content": {"application/json": {"schema": {"$ref": "#/components/schemas/Error"}}}}),
        );
    }
    Value::Object(out)
}

fn with_errors(ok: Value, codes: &[&str]) -> Value {
    let mut responses = error_responses(codes);
    if let (Value::Object(r), Value::Object(o)) = (&mut responses, ok) {
        r.extend(o);
    }
    responses
}

fn id_param() -> Value {
    json!({"name": "id", "in": "path", "required": true, "schema": {"type": "string"}})
}

fn lambda_param() -> Value {
    json!({"name": "lambda", "in": "query", "schema": {"type": "number", "minimum": 0, "maximum": 1, "default": 0.5},
           "description": "rounded to four decimals before use"})
}

fn body(schema: &str) -> Value {
    json!({"content": {"application/json": {"schema": {"$ref": format!("#/components/schemas/{schema}")}}}})
}

pub fn document() -> Value {
    json!({
        "openapi": "3.0.3",
        "info": {"title": "mixdr", "version": env!("CARGO_PKG_VERSION")},
        "paths": {
            "/health": {"get": {"responses": {"200": {"description": "alive"}}}},
            "/spec": {"get": {"responses": {"200": {"description": "this document"}}}},
            "/sessions": {
                "get": {"responses": {"200": {"description": "all sessions"}}},
                "post": {
                    "requestBody": {"required": true, "content": {"application/json": {"schema": {"$ref": "#/components/schemas/CreateSession"}}}},
                    "responses": with_errors(json!({
                        "201": merge(json!({"description": "fitted"}), body("Session")),
                        "202": merge(json!({"description": "fitting in the background"}), body("Session"))
                    }), &["409", "413", "422"])
                }
            },
            "/sessions/{id}": {
                "parameters": [id_param()],
                "get": {"responses": with_errors(json!({"200": merge(json!({"description": "status"}), body("Session"))}), &["404"])},
                "delete": {"responses": with_errors(json!({"204": {"description": "deleted"}}), &["404"])}
            },
            "/sessions/{id}/projection": {
                "parameters": [id_param()],
                "get": {
                    "parameters": [lambda_param(),
                        {"name": "dims", "in": "query", "schema": {"type": "integer", "minimum": 1, "maximum": 2}}],
                    "responses": with_errors(json!({"200": merge(json!({"description": "projection"}), body("Projection"))}), &["404", "409", "422"])
                }
            },
            "/sessions/{id}/boundary": {
                "parameters": [id_param()],
                "get": {
                    "parameters": [lambda_param(),
                        {"name": "grid", "in": "query", "schema": {"type": "integer", "minimum": 32, "maximum": 256, "default": 128}}],
                    "responses": with_errors(json!({"200": merge(json!({"description": "boundary raster"}), body("Boundary"))}), &["404", "409", "422"])
                }
            },
            "/sessions/{id}/lr": {
                "parameters": [id_param()],
                "get": {
                    "parameters": [
                        {"name": "steps", "in": "query", "schema": {"type": "integer", "minimum": 1, "maximum": 101, "default": 21}},
                        {"name": "d_eval", "in": "query", "schema": {"type": "integer", "minimum": 1}}],
                    "responses": with_errors(json!({"200": merge(json!({"description": "LR over a λ grid"}), body("LrTrace"))}), &["404", "409", "422"])
                }
            }
        },
        "components": {"schemas": {
            "Error": {"type": "object", "required": ["schema", "category", "message"], "properties": {
                "schema": {"type": "string", "enum": ["mixdr.error/v1"]},
                "category": {"type": "string"}, "message": {"type": "string"}}},
            "CreateSession": {"type": "object", "required": ["csv"], "properties": {
                "csv": {"type": "string"},
                "label_column": {"type": "string", "default": "class"},
                "async": {"type": "boolean", "default": false},
                "fit": {"type": "object", "properties": {
                    "family": {"type": "string", "enum": ["edda", "mclustda"], "default": "mclustda"},
                    "models": {"type": "array", "items": {"type": "string",
                        "enum": ["E", "V", "EII", "VII", "EEI", "VEI", "EVI", "VVI", "EEE", "EEV", "VEV", "VVV"]}},
                    "g_max": {"type": "integer", "minimum": 1, "default": 5},
                    "seed": {"type": "integer", "minimum": 0, "default": 0},
                    "marginal": {"type": "string", "enum": ["full", "diagonal"], "default": "full"},
                    "priors": {"type": "array", "items": {"type": "number"}}}}}},
            "Session": {"type": "object", "properties": {
                "schema": {"type": "string", "enum": ["mixdr.session/v1"]},
                "session_id": {"type": "string"},
                "status": {"type": "string", "enum": ["fitting", "ready", "failed"]},
                "created_unix_ms": {"type": "integer"},
                "n": {"type": "integer"}, "p": {"type": "integer"},
                "feature_names": {"type": "array", "items": {"type": "string"}},
                "classes": {"type": "array", "items": {"type": "string"}},
                "family": {"type": "string"}, "d": {"type": "integer"}, "bic": {"type": "number"},
                "selection_table": {"type": "array", "items": {"type": "object"}},
                "error": {"$ref": "#/components/schemas/Error"}}},
            "Projection": {"type": "object", "properties": {
                "schema": {"type": "string", "enum": ["mixdr.projection/v1"]},
                "session_id": {"type": "string"}, "lambda": {"type": "number"},
                "dims": {"type": "integer"}, "d": {"type": "integer"},
                "eigenvalues": {"type": "array", "items": {"type": "number"}},
                "loc_part": {"type": "array", "items": {"type": "number"}},
                "disp_part": {"type": "array", "items": {"type": "number"}},
                "beta": {"type": "array", "items": {"type": "array", "items": {"type": "number"}}},
                "feature_names": {"type": "array", "items": {"type": "string"}},
                "axis_names": {"type": "array", "items": {"type": "string"}},
                "points": {"type": "array", "items": {"type": "object", "properties": {
                    "z1": {"type": "number"}, "z2": {"type": "number"},
                    "label": {"type": "string"}, "uncertainty": {"type": "number"}}}}}},
            "Boundary": {"type": "object", "properties": {
                "schema": {"type": "string", "enum": ["mixdr.boundary/v1"]},
                "session_id": {"type": "string"}, "lambda": {"type": "number"},
                "grid_size": {"type": "integer"},
                "bounds": {"type": "object", "properties": {
                    "x_min": {"type": "number"}, "x_max": {"type": "number"},
                    "y_min": {"type": "number"}, "y_max": {"type": "number"}}},
                "classes": {"type": "array", "items": {"type": "string"}},
                "class_at_cell": {"type": "array", "items": {"type": "integer"}},
                "uncertainty_at_cell": {"type": "array", "items": {"type": "number"}},
                "max_uncertainty": {"type": "number"},
                "segments": {"type": "array", "items": {"type": "array", "items": {"type": "number"}, "minItems": 4, "maxItems": 4}}}},
            "LrTrace": {"type": "object", "properties": {
                "schema": {"type": "string", "enum": ["mixdr.lr/v1"]},
                "session_id": {"type": "string"}, "d_eval": {"type": "integer"},
                "grid": {"type": "array", "items": {"type": "number"}},
                "lr_values": {"type": "array", "items": {"type": "number"}},
                "argmax_lambda": {"type": "number"}}}
        }}
    })
}

fn merge(mut a: Value, b: Value) -> Value {
    if let (Value::Object(x), Value::Object(y)) = (&mut a, b) {
        x.extend(y);
    }
    a
}
