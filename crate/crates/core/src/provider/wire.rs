//! JSON bodies of the embedding service protocol.
//!
//! | method | path              | request            | response            |
//! |--------|-------------------|--------------------|---------------------|
//! | GET    | `/v1/info`        | –                  | [`InfoResponse`]    |
//! | POST   | `/v1/embed/text`  | [`TextRequest`]    | [`TextResponse`]    |
//! | POST   | `/v1/embed/image` | [`ImageRequest`]   | [`ImageResponse`]   |

use serde::{Deserialize, Serialize};

pub const INFO_PATH: &str = "/v1/info";
pub const TEXT_PATH: &str = "/v1/embed/text";
pub const IMAGE_PATH: &str = "/v1/embed/image";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InfoResponse {
    pub model: String,
    pub dim: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TextRequest {
    pub texts: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TextResponse {
    pub model: String,
    pub dim: usize,
    pub embeddings: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageRequest {
    pub media_type: String,
    pub data_base64: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageResponse {
    pub model: String,
    pub dim: usize,
    pub embedding: Vec<f64>,
}
