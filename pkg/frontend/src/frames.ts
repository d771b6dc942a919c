// Camera frame decoding: base64 grayscale bytes -> RGBA buffer for a
// canvas ImageData. Works in both browser (atob) and node (Buffer).

export function decodeBase64(b64: string): Uint8Array {
  if (typeof atob === "function") {
    const binary = atob(b64);
    const bytes = new Uint8Array(binary.length);
    for (let i = 0; i < binary.length; i++) bytes[i] = binary.charCodeAt(i);
    return bytes;
  }
  return new Uint8Array(Buffer.from(b64, "base64"));
}

/** Expand size*size grayscale bytes into an RGBA pixel buffer. */
export function grayToRgba(gray: Uint8Array, size: number): Uint8ClampedArray<ArrayBuffer> {
  if (gray.length !== size * size) {
    throw new Error(`expected ${size * size} bytes, got ${gray.length}`);
  }
  const rgba = new Uint8ClampedArray(new ArrayBuffer(size * size * 4));
  for (let i = 0; i < gray.length; i++) {
    const v = gray[i];
    rgba[i * 4] = v;
    rgba[i * 4 + 1] = v;
    rgba[i * 4 + 2] = v;
    rgba[i * 4 + 3] = 255;
  }
  return rgba;
}
