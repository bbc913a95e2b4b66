#pragma once

#include <sodium.h>
#include <sqlite3.h>

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cstdint>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "xcloud/error.hpp"

namespace xcloud::store {

/// Milliseconds since the Unix epoch, UTC.
using TimestampMs = std::int64_t;

inline TimestampMs now_ms() {
  using namespace std::chrono;
  return duration_cast<milliseconds>(system_clock::now().time_since_epoch()).count();
}

/// "2019-11-03T08:15:42.007Z"
inline std::string format_timestamp(TimestampMs ts) {
  std::time_t secs = static_cast<std::time_t>(ts / 1000);
  int ms = static_cast<int>(ts % 1000);
  if (ms < 0) {
    ms += 1000;
    --secs;
  }
  std::tm tm{};
  gmtime_r(&secs, &tm);
  char buf[72];
  std::snprintf(buf, sizeof buf, "%04d-%02d-%02dT%02d:%02d:%02d.%03dZ", tm.tm_year + 1900,
                tm.tm_mon + 1, tm.tm_mday, tm.tm_hour, tm.tm_min, tm.tm_sec, ms);
  return buf;
}

enum class TerminalType : int { Web = 0, Android = 1, Ios = 2, MiniProgram = 3, Api = 4 };
enum class RegisterType : int { WebForm = 0, Imported = 1, AdminCreated = 2 };

// Column limits of the two tables, in characters.
inline constexpr std::size_t kMaxUsername = 16;
inline constexpr std::size_t kMaxApiName = 20;
inline constexpr std::size_t kMaxImgPath = 100;
inline constexpr std::size_t kMaxOrganization = 100;
inline constexpr std::size_t kMaxEmail = 50;
inline constexpr std::size_t kMaxUserkey = 20;
inline constexpr std::size_t kMaxCredential = 12;

struct ApiCallRecord {
  std::string username;
  std::string api_name;
  double api_elapse = 0.0;  // ms
  TimestampMs api_call_datetime = 0;
  int terminal_type = 0;
  std::string img_path;

  bool operator==(const ApiCallRecord&) const = default;
};

struct UserRecord {
  std::string username;
  TimestampMs register_datetime = 0;
  int register_type = 0;
  std::string user_organization;
  std::string email;
  std::string userkey;
  std::string credential_digest;

  bool operator==(const UserRecord&) const = default;
};

struct NewUser {
  std::string username;
  int register_type = static_cast<int>(RegisterType::AdminCreated);
  std::string user_organization;
  std::string email;
  std::string userkey;
  std::string credential;  // plaintext, never stored
  std::optional<TimestampMs> register_datetime;
};

struct CallFilter {
  std::optional<std::string> username;
  std::optional<std::string> api_name;
  std::optional<TimestampMs> since;  // inclusive
  std::optional<TimestampMs> until;  // inclusive
  std::size_t limit = 100;
};

/// UTF-8 code points; invalid sequences count bytewise.
inline std::size_t char_length(std::string_view s) {
  std::size_t n = 0;
  for (unsigned char c : s) n += (c & 0xC0) != 0x80 ? 1 : 0;
  return n;
}

/// Longest prefix of at most `max_chars` code points.
inline std::string truncate_chars(std::string_view s, std::size_t max_chars) {
  std::size_t chars = 0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if ((static_cast<unsigned char>(s[i]) & 0xC0) != 0x80) {
      if (chars == max_chars) return std::string(s.substr(0, i));
      ++chars;
    }
  }
  return std::string(s);
}

/// Cost of the salted credential digest (Argon2id via libsodium).
enum class CredentialHashing { Interactive, Minimal };

namespace detail {

inline void check_length(std::string_view field, std::string_view value, std::size_t max) {
  if (char_length(value) > max) {
    fail(ErrorCode::FieldTooLong, std::string(field) + " exceeds " + std::to_string(max) + " characters");
  }
}

inline void check_not_empty(std::string_view field, std::string_view value) {
  if (value.empty()) fail(ErrorCode::InvalidArgument, std::string(field) + " must not be empty");
}

struct StatementDeleter {
  void operator()(sqlite3_stmt* s) const noexcept { sqlite3_finalize(s); }
};
using Statement = std::unique_ptr<sqlite3_stmt, StatementDeleter>;

struct DbDeleter {
  void operator()(sqlite3* db) const noexcept { sqlite3_close_v2(db); }
};

inline std::string csv_field(std::string_view v) {
  if (v.find_first_of(",\"\r\n") == std::string_view::npos) return std::string(v);
  std::string out = "\"";
  for (char c : v) {
    if (c == '"') out += '"';
    out += c;
  }
  out += '"';
  return out;
}

inline std::string format_double(double v) {
  char buf[32];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

}  // namespace detail

/// Embedded relational store for users and API call records (SQLite).
class Store {
 public:
  static constexpr std::string_view kDatabaseFile = "xcloud.db";

  explicit Store(const std::filesystem::path& data_dir,
                 CredentialHashing hashing = CredentialHashing::Interactive)
      : hashing_(hashing) {
    if (sodium_init() < 0) fail(ErrorCode::StorageFailure, "libsodium initialisation failed");
    std::error_code ec;
    std::filesystem::create_directories(data_dir, ec);
    if (ec) fail(ErrorCode::StorageFailure, "cannot create " + data_dir.string() + ": " + ec.message());
    path_ = data_dir / kDatabaseFile;
    sqlite3* raw = nullptr;
    const int rc = sqlite3_open_v2(path_.c_str(), &raw,
                                   SQLITE_OPEN_READWRITE | SQLITE_OPEN_CREATE | SQLITE_OPEN_FULLMUTEX,
                                   nullptr);
    db_.reset(raw);
    if (rc != SQLITE_OK) fail(ErrorCode::StorageFailure, "open " + path_.string() + ": " + sqlite3_errstr(rc));
    sqlite3_busy_timeout(db_.get(), 5000);
    exec("PRAGMA journal_mode=WAL");
    exec("PRAGMA synchronous=FULL");
    exec("PRAGMA foreign_keys=ON");
    exec(R"sql(
      CREATE TABLE IF NOT EXISTS users (
        username          TEXT PRIMARY KEY NOT NULL,
        register_datetime INTEGER NOT NULL,
        register_type     INTEGER NOT NULL,
        user_organization TEXT NOT NULL,
        email             TEXT NOT NULL,
        userkey           TEXT NOT NULL UNIQUE,
        credential_digest TEXT NOT NULL
      );
      CREATE TABLE IF NOT EXISTS api_calls (
        id                INTEGER PRIMARY KEY AUTOINCREMENT,
        username          TEXT NOT NULL REFERENCES users(username),
        api_name          TEXT NOT NULL,
        api_elapse        REAL NOT NULL,
        api_call_datetime INTEGER NOT NULL,
        terminal_type     INTEGER NOT NULL,
        img_path          TEXT NOT NULL
      );
      CREATE INDEX IF NOT EXISTS api_calls_by_time ON api_calls(api_call_datetime);
      CREATE INDEX IF NOT EXISTS api_calls_by_user ON api_calls(username, api_call_datetime);
    )sql");
  }

  Store(const Store&) = delete;
  Store& operator=(const Store&) = delete;

  const std::filesystem::path& path() const noexcept { return path_; }

  UserRecord create_user(const NewUser& u) {
    detail::check_not_empty("username", u.username);
    detail::check_not_empty("userkey", u.userkey);
    detail::check_not_empty("credential", u.credential);
    detail::check_length("username", u.username, kMaxUsername);
    detail::check_length("user_organization", u.user_organization, kMaxOrganization);
    detail::check_length("email", u.email, kMaxEmail);
    detail::check_length("userkey", u.userkey, kMaxUserkey);
    detail::check_length("credential", u.credential, kMaxCredential);
    if (u.email.find('@') == std::string::npos) fail(ErrorCode::InvalidArgument, "email must contain '@'");
    if (u.register_type < 0 || u.register_type > 2) {
      fail(ErrorCode::InvalidArgument, "register_type must be 0, 1 or 2");
    }

    UserRecord rec{u.username, u.register_datetime.value_or(now_ms()), u.register_type,
                   u.user_organization, u.email, u.userkey, digest(u.credential)};

    std::lock_guard lock(mutex_);
    auto st = prepare(
        "INSERT INTO users(username, register_datetime, register_type, user_organization, email, "
        "userkey, credential_digest) VALUES(?,?,?,?,?,?,?)");
    bind_text(st, 1, rec.username);
    sqlite3_bind_int64(st.get(), 2, rec.register_datetime);
    sqlite3_bind_int(st.get(), 3, rec.register_type);
    bind_text(st, 4, rec.user_organization);
    bind_text(st, 5, rec.email);
    bind_text(st, 6, rec.userkey);
    bind_text(st, 7, rec.credential_digest);
    const int rc = sqlite3_step(st.get());
    if (rc != SQLITE_DONE) {
      const int ext = sqlite3_extended_errcode(db_.get());
      const std::string msg = sqlite3_errmsg(db_.get());
      if (ext == SQLITE_CONSTRAINT_PRIMARYKEY || msg.find("users.username") != std::string::npos) {
        fail(ErrorCode::DuplicateUsername, rec.username);
      }
      if (ext == SQLITE_CONSTRAINT_UNIQUE) fail(ErrorCode::DuplicateUserkey, "userkey already in use");
      fail(ErrorCode::StorageFailure, msg);
    }
    return rec;
  }

  /// Case-sensitive exact match.
  UserRecord lookup_user_by_key(std::string_view userkey) const {
    auto user = find_user_where("userkey", userkey);
    if (!user) fail(ErrorCode::NotFound, "no user with that key");
    return *user;
  }

  std::optional<UserRecord> find_user(std::string_view username) const {
    return find_user_where("username", username);
  }

  bool verify_credential(std::string_view username, std::string_view credential) const {
    auto user = find_user(username);
    if (!user) return false;
    const std::string pw(credential);
    return crypto_pwhash_str_verify(user->credential_digest.c_str(), pw.c_str(), pw.size()) == 0;
  }

  std::vector<UserRecord> list_users() const {
    std::lock_guard lock(mutex_);
    auto st = prepare(std::string(kUserSelect) + " ORDER BY username");
    std::vector<UserRecord> out;
    while (step_row(st)) out.push_back(read_user(st.get()));
    return out;
  }

  void record_api_call(const ApiCallRecord& r) { record_api_calls({&r, 1}); }

  /// Appends all records in one transaction; either all or none land.
  void record_api_calls(std::span<const ApiCallRecord> records) {
    for (const auto& r : records) validate(r);
    std::lock_guard lock(mutex_);
    exec("BEGIN IMMEDIATE");
    try {
      auto st = prepare(
          "INSERT INTO api_calls(username, api_name, api_elapse, api_call_datetime, terminal_type, "
          "img_path) VALUES(?,?,?,?,?,?)");
      for (const auto& r : records) {
        sqlite3_reset(st.get());
        bind_text(st, 1, r.username);
        bind_text(st, 2, r.api_name);
        sqlite3_bind_double(st.get(), 3, r.api_elapse);
        sqlite3_bind_int64(st.get(), 4, r.api_call_datetime);
        sqlite3_bind_int(st.get(), 5, r.terminal_type);
        bind_text(st, 6, r.img_path);
        if (sqlite3_step(st.get()) != SQLITE_DONE) {
          if (sqlite3_extended_errcode(db_.get()) == SQLITE_CONSTRAINT_FOREIGNKEY) {
            fail(ErrorCode::UnknownUser, r.username);
          }
          fail(ErrorCode::StorageFailure, sqlite3_errmsg(db_.get()));
        }
      }
      exec("COMMIT");
    } catch (...) {
      sqlite3_exec(db_.get(), "ROLLBACK", nullptr, nullptr, nullptr);
      throw;
    }
  }

  /// Newest first, at most filter.limit rows.
  std::vector<ApiCallRecord> query_calls(const CallFilter& f) const {
    if (f.limit < 1) fail(ErrorCode::InvalidArgument, "limit must be >= 1");
    std::string sql =
        "SELECT username, api_name, api_elapse, api_call_datetime, terminal_type, img_path "
        "FROM api_calls WHERE 1=1";
    if (f.username) sql += " AND username = ?1";
    if (f.api_name) sql += " AND api_name = ?2";
    if (f.since) sql += " AND api_call_datetime >= ?3";
    if (f.until) sql += " AND api_call_datetime <= ?4";
    sql += " ORDER BY api_call_datetime DESC, id DESC LIMIT ?5";

    std::lock_guard lock(mutex_);
    auto st = prepare(sql);
    if (f.username) bind_text(st, 1, *f.username);
    if (f.api_name) bind_text(st, 2, *f.api_name);
    if (f.since) sqlite3_bind_int64(st.get(), 3, *f.since);
    if (f.until) sqlite3_bind_int64(st.get(), 4, *f.until);
    sqlite3_bind_int64(st.get(), 5, static_cast<sqlite3_int64>(std::min<std::size_t>(f.limit, INT64_MAX)));
    std::vector<ApiCallRecord> out;
    while (step_row(st)) out.push_back(read_call(st.get()));
    return out;
  }

  /// All records in insertion order.
  std::vector<ApiCallRecord> all_calls() const {
    std::lock_guard lock(mutex_);
    auto st = prepare(
        "SELECT username, api_name, api_elapse, api_call_datetime, terminal_type, img_path "
        "FROM api_calls ORDER BY id");
    std::vector<ApiCallRecord> out;
    while (step_row(st)) out.push_back(read_call(st.get()));
    return out;
  }

  std::size_t count_calls() const {
    std::lock_guard lock(mutex_);
    auto st = prepare("SELECT COUNT(*) FROM api_calls");
    step_row(st);
    return static_cast<std::size_t>(sqlite3_column_int64(st.get(), 0));
  }

  /// Writes api_calls.csv and users.csv into `dir`. The credential digest is
  /// not exported.
  void export_csv(const std::filesystem::path& dir) const {
    std::filesystem::create_directories(dir);
    {
      std::ofstream out(dir / "api_calls.csv", std::ios::binary);
      out << "username,api_name,api_elapse,api_call_datetime,terminal_type,img_path\n";
      for (const auto& r : all_calls()) {
        out << detail::csv_field(r.username) << ',' << detail::csv_field(r.api_name) << ','
            << detail::format_double(r.api_elapse) << ',' << format_timestamp(r.api_call_datetime)
            << ',' << r.terminal_type << ',' << detail::csv_field(r.img_path) << '\n';
      }
      if (!out) fail(ErrorCode::StorageFailure, "writing api_calls.csv failed");
    }
    std::ofstream out(dir / "users.csv", std::ios::binary);
    out << "username,register_datetime,register_type,user_organization,email,userkey\n";
    for (const auto& u : list_users()) {
      out << detail::csv_field(u.username) << ',' << format_timestamp(u.register_datetime) << ','
          << u.register_type << ',' << detail::csv_field(u.user_organization) << ','
          << detail::csv_field(u.email) << ',' << detail::csv_field(u.userkey) << '\n';
    }
    if (!out) fail(ErrorCode::StorageFailure, "writing users.csv failed");
  }

  static void validate(const ApiCallRecord& r) {
    detail::check_not_empty("username", r.username);
    detail::check_length("username", r.username, kMaxUsername);
    detail::check_length("api_name", r.api_name, kMaxApiName);
    detail::check_length("img_path", r.img_path, kMaxImgPath);
    if (r.terminal_type < 0 || r.terminal_type > 4) {
      fail(ErrorCode::InvalidArgument, "terminal_type must be in 0..4");
    }
  }

 private:
  static constexpr std::string_view kUserSelect =
      "SELECT username, register_datetime, register_type, user_organization, email, userkey, "
      "credential_digest FROM users";

  std::string digest(const std::string& credential) const {
    char out[crypto_pwhash_STRBYTES];
    const bool minimal = hashing_ == CredentialHashing::Minimal;
    const auto ops = minimal ? crypto_pwhash_OPSLIMIT_MIN : crypto_pwhash_OPSLIMIT_INTERACTIVE;
    const auto mem = minimal ? crypto_pwhash_MEMLIMIT_MIN : crypto_pwhash_MEMLIMIT_INTERACTIVE;
    if (crypto_pwhash_str(out, credential.c_str(), credential.size(), ops, mem) != 0) {
      fail(ErrorCode::StorageFailure, "credential hashing ran out of memory");
    }
    return out;
  }

  std::optional<UserRecord> find_user_where(std::string_view column, std::string_view value) const {
    std::lock_guard lock(mutex_);
    auto st = prepare(std::string(kUserSelect) + " WHERE " + std::string(column) + " = ?1");
    bind_text(st, 1, value);
    if (!step_row(st)) return std::nullopt;
    return read_user(st.get());
  }

  void exec(const char* sql) const {
    char* err = nullptr;
    if (sqlite3_exec(db_.get(), sql, nullptr, nullptr, &err) != SQLITE_OK) {
      std::string msg = err ? err : "unknown error";
      sqlite3_free(err);
      fail(ErrorCode::StorageFailure, msg);
    }
  }

  detail::Statement prepare(const std::string& sql) const {
    sqlite3_stmt* raw = nullptr;
    if (sqlite3_prepare_v2(db_.get(), sql.c_str(), static_cast<int>(sql.size()), &raw, nullptr) != SQLITE_OK) {
      fail(ErrorCode::StorageFailure, sqlite3_errmsg(db_.get()));
    }
    return detail::Statement(raw);
  }

  static void bind_text(const detail::Statement& st, int idx, std::string_view v) {
    sqlite3_bind_text(st.get(), idx, v.data(), static_cast<int>(v.size()), SQLITE_TRANSIENT);
  }

  bool step_row(const detail::Statement& st) const {
    const int rc = sqlite3_step(st.get());
    if (rc == SQLITE_ROW) return true;
    if (rc == SQLITE_DONE) return false;
    fail(ErrorCode::StorageFailure, sqlite3_errmsg(db_.get()));
  }

  static std::string column_text(sqlite3_stmt* st, int col) {
    const auto* p = reinterpret_cast<const char*>(sqlite3_column_text(st, col));
    return p ? std::string(p, static_cast<std::size_t>(sqlite3_column_bytes(st, col))) : std::string();
  }

  static UserRecord read_user(sqlite3_stmt* st) {
    return {column_text(st, 0), sqlite3_column_int64(st, 1), sqlite3_column_int(st, 2),
            column_text(st, 3), column_text(st, 4), column_text(st, 5), column_text(st, 6)};
  }

  static ApiCallRecord read_call(sqlite3_stmt* st) {
    return {column_text(st, 0), column_text(st, 1), sqlite3_column_double(st, 2),
            sqlite3_column_int64(st, 3), sqlite3_column_int(st, 4), column_text(st, 5)};
  }

  CredentialHashing hashing_;
  std::filesystem::path path_;
  std::unique_ptr<sqlite3, detail::DbDeleter> db_;
  mutable std::mutex mutex_;
};

}  // namespace xcloud::store
