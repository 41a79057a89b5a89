#pragma once

#include <iosfwd>
#include <string>
#include <string_view>
#include <vector>

namespace clinfair::csv {

using Record = std::vector<std::string>;

// RFC 4180 reader: comma separated, optional double-quoted fields with ""
// escapes, quoted fields may span lines. CRLF and LF both accepted. A UTF-8
// byte-order mark at the start of the stream is skipped.
std::vector<Record> read(std::istream& in);
std::vector<Record> read_file(const std::string& path);

// Quotes the field only when it contains a comma, quote, or newline.
std::string escape(std::string_view field);
void write_record(std::ostream& out, const Record& record);

}  // namespace clinfair::csv
