#include "patchprobe/artifact_io.hpp"

#include <openssl/evp.h>

#include <fstream>
#include <sstream>

#include "patchprobe/errors.hpp"

namespace patchprobe {

namespace {

std::string digest_to_hex(const unsigned char* d, unsigned len) {
  static const char* hex = "0123456789abcdef";
  std::string out(size_t(len) * 2, '0');
  for (unsigned i = 0; i < len; ++i) {
    out[2 * i] = hex[d[i] >> 4];
    out[2 * i + 1] = hex[d[i] & 0xF];
  }
  return out;
}

}  // namespace

std::string sha256_hex(const void* data, size_t n) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned len = 0;
  if (!EVP_Digest(data, n, digest, &len, EVP_sha256(), nullptr))
    throw InternalError("sha256 failed");
  return digest_to_hex(digest, len);
}

std::string sha256_hex(const std::string& s) { return sha256_hex(s.data(), s.size()); }

std::string sha256_file(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw UserError("cannot open for hashing: " + path.string());
  EVP_MD_CTX* ctx = EVP_MD_CTX_new();
  EVP_DigestInit_ex(ctx, EVP_sha256(), nullptr);
  char buf[1 << 16];
  while (f) {
    f.read(buf, sizeof buf);
    EVP_DigestUpdate(ctx, buf, size_t(f.gcount()));
  }
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned len = 0;
  EVP_DigestFinal_ex(ctx, digest, &len);
  EVP_MD_CTX_free(ctx);
  return digest_to_hex(digest, len);
}

std::string config_hash(const json& j) { return sha256_hex(j.dump()); }

void write_text_file(const std::filesystem::path& path, const std::string& content) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream f(path, std::ios::binary);
  if (!f) throw UserError("cannot write " + path.string());
  f << content;
  if (!f) throw InternalError("short write to " + path.string());
}

std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw UserError("cannot read " + path.string());
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

void write_json_file(const std::filesystem::path& path, const json& j) {
  write_text_file(path, j.dump(2) + "\n");
}

json read_json_file(const std::filesystem::path& path) {
  try {
    return json::parse(read_text_file(path));
  } catch (const json::exception& e) {
    throw UserError("invalid JSON in " + path.string() + ": " + e.what());
  }
}

JsonReader::JsonReader(const json& j, std::string where) : obj_(j), where_(std::move(where)) {
  if (!obj_.is_object()) fail("expected a JSON object");
}

bool JsonReader::has(const std::string& key) const { return obj_.contains(key); }

json JsonReader::raw(const std::string& key) {
  mark(key);
  if (!obj_.contains(key)) fail("missing required key '" + key + "'");
  return obj_.at(key);
}

JsonReader JsonReader::child(const std::string& key) {
  mark(key);
  if (!obj_.contains(key)) fail("missing required key '" + key + "'");
  return JsonReader(obj_.at(key), where_ + "." + key);
}

void JsonReader::finish() {
  for (auto it = obj_.begin(); it != obj_.end(); ++it)
    if (!seen_.count(it.key())) fail("unknown key '" + it.key() + "'");
}

void JsonReader::fail(const std::string& msg) const {
  throw UserError(where_ + ": " + msg);
}

}  // namespace patchprobe
