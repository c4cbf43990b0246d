/** Base64 helpers that work in both browsers and Node without Buffer. */

const ALPHABET =
  "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";

const REVERSE: Record<string, number> = {};
for (let i = 0; i < ALPHABET.length; i++) REVERSE[ALPHABET[i]!] = i;

export function bytesToBase64(bytes: Uint8Array): string {
  const out: string[] = [];
  for (let i = 0; i < bytes.length; i += 3) {
    const a = bytes[i]!;
    const b = i + 1 < bytes.length ? bytes[i + 1]! : 0;
    const c = i + 2 < bytes.length ? bytes[i + 2]! : 0;
    const triple = (a << 16) | (b << 8) | c;
    out.push(ALPHABET[(triple >> 18) & 63]!);
    out.push(ALPHABET[(triple >> 12) & 63]!);
    out.push(i + 1 < bytes.length ? ALPHABET[(triple >> 6) & 63]! : "=");
    out.push(i + 2 < bytes.length ? ALPHABET[triple & 63]! : "=");
  }
  return out.join("");
}

export function base64ToBytes(text: string): Uint8Array {
  const clean = text.replace(/=+$/, "");
  if (!/^[A-Za-z0-9+/]*$/.test(clean)) {
    throw new Error("invalid base64 input");
  }
  const out = new Uint8Array(Math.floor((clean.length * 3) / 4));
  let o = 0;
  for (let i = 0; i < clean.length; i += 4) {
    const n0 = REVERSE[clean[i]!]!;
    const n1 = i + 1 < clean.length ? REVERSE[clean[i + 1]!]! : 0;
    const n2 = i + 2 < clean.length ? REVERSE[clean[i + 2]!]! : 0;
    const n3 = i + 3 < clean.length ? REVERSE[clean[i + 3]!]! : 0;
    const triple = (n0 << 18) | (n1 << 12) | (n2 << 6) | n3;
    if (o < out.length) out[o++] = (triple >> 16) & 255;
    if (o < out.length) out[o++] = (triple >> 8) & 255;
    if (o < out.length) out[o++] = triple & 255;
  }
  return out;
}
