//! Image payloads for remote calls.

use std::io::Cursor;
use std::path::Path;

use base64::Engine as _;
use image::imageops::FilterType;
use image::ImageFormat;

pub const DEFAULT_RESIZE_EDGE: u32 = 224;

/// An image ready to be embedded in a request body.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EncodedImage {
    pub mime: &'static str,
    pub base64: String,
}

impl EncodedImage {
    pub fn data_url(&self) -> String {
        format!("data:{};base64,{}", self.mime, self.base64)
    }
}

fn mime_for(path: &Path) -> &'static str {
    match path
        .extension()
        .and_then(|e| e.to_str())
        .map(str::to_ascii_lowercase)
        .as_deref()
    {
        Some("png") => "image/png",
        Some("gif") => "image/gif",
        Some("webp") => "image/webp",
        _ => "image/jpeg",
    }
}

/// Read an image and base64-encode it, optionally resized to a square of
/// `resize_edge` pixels and re-encoded as PNG.
pub fn encode_image(path: &Path, resize_edge: Option<u32>) -> Result<EncodedImage, String> {
    let bytes = std::fs::read(path).map_err(|e| format!("{}: {e}", path.display()))?;
    encode_image_bytes(&bytes, mime_for(path), resize_edge).map_err(|e| format!("{}: {e}", path.display()))
}

pub fn encode_image_bytes(
    bytes: &[u8],
    mime: &'static str,
    resize_edge: Option<u32>,
) -> Result<EncodedImage, String> {
    let engine = base64::engine::general_purpose::STANDARD;
    let Some(edge) = resize_edge else {
        return Ok(EncodedImage {
            mime,
            base64: engine.encode(bytes),
        });
    };
    let img = image::load_from_memory(bytes).map_err(|e| e.to_string())?;
    let resized = img.resize_exact(edge, edge, FilterType::Triangle);
    let mut out = Cursor::new(Vec::new());
    resized
        .write_to(&mut out, ImageFormat::Png)
        .map_err(|e| e.to_string())?;
    Ok(EncodedImage {
        mime: "image/png",
        base64: engine.encode(out.into_inner()),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn png(w: u32, h: u32) -> Vec<u8> {
        let img = image::RgbImage::from_fn(w, h, |x, y| image::Rgb([x as u8, y as u8, 7]));
        let mut out = Cursor::new(Vec::new());
        img.write_to(&mut out, ImageFormat::Png).unwrap();
        out.into_inner()
    }

    #[test]
    fn raw_passthrough() {
        let e = encode_image_bytes(b"abc", "image/jpeg", None).unwrap();
        assert_eq!(e.base64, "YWJj");
        assert_eq!(e.data_url(), "data:image/jpeg;base64,YWJj");
    }

    #[test]
    fn resizes_to_square() {
        let e = encode_image_bytes(&png(40, 30), "image/png", Some(224)).unwrap();
        let bytes = base64::engine::general_purpose::STANDARD.decode(e.base64).unwrap();
        let img = image::load_from_memory(&bytes).unwrap();
        assert_eq!((img.width(), img.height()), (224, 224));
    }

    #[test]
    fn undecodable_image_fails_only_when_resizing() {
        assert!(encode_image_bytes(b"not an image", "image/jpeg", Some(224)).is_err());
        assert!(encode_image_bytes(b"not an image", "image/jpeg", None).is_ok());
    }
}
