#include <fstream>

#include <openssl/evp.h>

#include "json.hpp"
#include "meea/clients.hpp"

namespace meea {

std::string sha256_hex(const std::string& data) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(data.data(), data.size(), digest, &len, EVP_sha256(), nullptr) != 1) {
    throw std::runtime_error("sha256 digest failed");
  }
  static const char* hex = "0123456789abcdef";
  std::string out;
  out.reserve(len * 2);
  for (unsigned int i = 0; i < len; ++i) {
    out.push_back(hex[digest[i] >> 4]);
    out.push_back(hex[digest[i] & 0xf]);
  }
  return out;
}

std::string RecordReplayEndpoint::request_hash(const std::vector<Message>& history,
                                               const std::string& prompt) {
  nlohmann::json j;
  j["history"] = nlohmann::json::array();
  for (const auto& m : history) {
    j["history"].push_back({{"role", role_name(m.role)}, {"content", m.content}});
  }
  j["prompt"] = prompt;
  return sha256_hex(j.dump());
}

RecordReplayEndpoint::RecordReplayEndpoint(CassetteMode mode,
                                           const std::string& cassette_path,
                                           std::shared_ptr<ModelEndpoint> inner)
    : mode_(mode), path_(cassette_path), inner_(std::move(inner)) {
  if (mode_ == CassetteMode::Record) {
    if (!inner_) throw std::invalid_argument("record mode requires an inner endpoint");
    std::ofstream out(path_, std::ios::app);
    if (!out) throw std::runtime_error("cassette path not writable: " + path_);
  } else {
    std::ifstream in(path_);
    if (!in) throw std::runtime_error("cassette not found: " + path_);
    std::string line;
    size_t lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      if (line.empty()) continue;
      try {
        nlohmann::json j = nlohmann::json::parse(line);
        entries_[j.at("hash").get<std::string>()] = j.at("response").get<std::string>();
      } catch (const std::exception& ex) {
        throw std::runtime_error("cassette " + path_ + " line " + std::to_string(lineno) +
                                 ": " + ex.what());
      }
    }
  }
}

std::string RecordReplayEndpoint::complete(const std::vector<Message>& history,
                                           const std::string& prompt) {
  std::string hash = request_hash(history, prompt);
  if (mode_ == CassetteMode::Replay) {
    std::lock_guard lock(mutex_);
    auto it = entries_.find(hash);
    if (it == entries_.end()) throw cassette_miss(hash);
    return it->second;
  }
  std::string response = inner_->complete(history, prompt);
  std::lock_guard lock(mutex_);
  entries_[hash] = response;
  std::ofstream out(path_, std::ios::app);
  if (!out) throw std::runtime_error("cassette path not writable: " + path_);
  nlohmann::json j{{"hash", hash}, {"response", response}};
  out << j.dump() << "\n";
  return response;
}

}  // namespace meea
