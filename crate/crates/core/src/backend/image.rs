use std::path::Path;

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use sha2::{Digest, Sha256};

#[derive(Debug, thiserror::Error)]
pub enum ImageError {
    #[error("cannot read image {path}: {source}")]
    Read {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("unsupported media type for {0}: content is not a recognized image format")]
    UnsupportedMediaType(String),
}

/// Raw image bytes with a sniffed media type.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ImagePayload {
    pub media_type: &'static str,
    pub data: Vec<u8>,
}

impl ImagePayload {
    pub fn base64(&self) -> String {
        STANDARD.encode(&self.data)
    }

    pub fn to_data_url(&self) -> String {
        format!("data:{};base64,{}", self.media_type, self.base64())
    }
}

/// What the backend receives as the image of a request.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ImageSource {
    Inline(ImagePayload),
    /// Remote or data URL passed through to the server unchanged.
    Url(String),
}

impl ImageSource {
    /// Value for an `image_url.url` field.
    pub fn wire_url(&self) -> String {
        match self {
            ImageSource::Inline(p) => p.to_data_url(),
            ImageSource::Url(u) => u.clone(),
        }
    }

    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        match self {
            ImageSource::Inline(p) => {
                h.update(p.media_type.as_bytes());
                h.update([0]);
                h.update(&p.data);
            }
            ImageSource::Url(u) => h.update(u.as_bytes()),
        }
        hex::encode(h.finalize())
    }
}

/// Media type from magic bytes. Extensions are not trusted.
pub fn sniff_media_type(data: &[u8]) -> Option<&'static str> {
    const SIGNATURES: &[(&[u8], &str)] = &[
        (b"\x89PNG\r\n\x1a\n", "image/png"),
        (b"\xff\xd8\xff", "image/jpeg"),
        (b"GIF87a", "image/gif"),
        (b"GIF89a", "image/gif"),
        (b"BM", "image/bmp"),
        (b"II*\0", "image/tiff"),
        (b"MM\0*", "image/tiff"),
    ];
    if data.len() >= 12 && &data[0..4] == b"RIFF" && &data[8..12] == b"WEBP" {
        return Some("image/webp");
    }
    SIGNATURES
        .iter()
        .find(|(sig, _)| data.starts_with(sig))
        .map(|&(_, mt)| mt)
}

pub fn encode_image_bytes(data: Vec<u8>, label: &str) -> Result<ImagePayload, ImageError> {
    let media_type = sniff_media_type(&data).ok_or_else(|| ImageError::UnsupportedMediaType(label.to_string()))?;
    Ok(ImagePayload { media_type, data })
}

pub fn encode_image_path(path: &Path) -> Result<ImagePayload, ImageError> {
    let data = std::fs::read(path).map_err(|source| ImageError::Read {
        path: path.display().to_string(),
        source,
    })?;
    encode_image_bytes(data, &path.display().to_string())
}

#[cfg(test)]
mod tests {
    use super::*;

    const PIXEL_PNG: &[u8] = &[
        0x89, 0x50, 0x4e, 0x47, 0x0d, 0x0a, 0x1a, 0x0a, 0x00, 0x00, 0x00, 0x0d, 0x49, 0x48, 0x44, 0x52, 0x00, 0x00,
        0x00, 0x01, 0x00, 0x00, 0x00, 0x01, 0x08, 0x06, 0x00, 0x00, 0x00, 0x1f, 0x15, 0xc4, 0x89, 0x00, 0x00, 0x00,
        0x0d, 0x49, 0x44, 0x41, 0x54, 0x78, 0x9c, 0x63, 0xf8, 0xcf, 0xc0, 0xf0, 0x1f, 0x00, 0x05, 0x00, 0x01, 0xff,
        0x56, 0xc7, 0x2f, 0x0d, 0x00, 0x00, 0x00, 0x00, 0x49, 0x45, 0x4e, 0x44, 0xae, 0x42, 0x60, 0x82,
    ];

    #[test]
    fn png_round_trips_through_base64() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("pixel.png");
        std::fs::write(&path, PIXEL_PNG).unwrap();
        let payload = encode_image_path(&path).unwrap();
        assert_eq!(payload.media_type, "image/png");
        assert_eq!(STANDARD.decode(payload.base64()).unwrap(), PIXEL_PNG);
        assert!(payload.to_data_url().starts_with("data:image/png;base64,iVBORw0KGgo"));
    }

    #[test]
    fn missing_file_is_read_error() {
        let err = encode_image_path(Path::new("/definitely/not/here.png")).unwrap_err();
        assert!(matches!(err, ImageError::Read { .. }));
    }

    #[test]
    fn text_with_image_extension_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("fake.png");
        std::fs::write(&path, "just some text, not a picture").unwrap();
        assert!(matches!(encode_image_path(&path), Err(ImageError::UnsupportedMediaType(_))));
    }

    #[test]
    fn sniffs_common_formats() {
        assert_eq!(sniff_media_type(b"\xff\xd8\xff\xe0rest"), Some("image/jpeg"));
        assert_eq!(sniff_media_type(b"RIFF\0\0\0\0WEBPVP8 "), Some("image/webp"));
        assert_eq!(sniff_media_type(b"GIF89a..."), Some("image/gif"));
        assert_eq!(sniff_media_type(b""), None);
    }

    #[test]
    fn digest_depends_on_content() {
        let a = ImageSource::Inline(encode_image_bytes(PIXEL_PNG.to_vec(), "a").unwrap());
        let b = ImageSource::Url("https://example.com/a.png".into());
        assert_ne!(a.digest(), b.digest());
        assert_eq!(a.digest(), a.clone().digest());
    }
}
