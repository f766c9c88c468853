#include "docdpm/ocr.hpp"

#include <set>
#include <stdexcept>

namespace docdpm {

int Alphabet::index_of(char c) const {
    auto pos = symbols.find(c);
    if (pos == std::string::npos)
        throw std::invalid_argument(std::string("alphabet: symbol '") + c + "' not in alphabet");
    return static_cast<int>(pos) + 1;
}

char Alphabet::symbol(int index) const {
    if (index < 1 || index >= classes())
        throw std::invalid_argument("alphabet: class index out of range");
    return symbols[static_cast<std::size_t>(index) - 1];
}

std::vector<int> Alphabet::encode(const std::string& text) const {
    std::vector<int> out;
    out.reserve(text.size());
    for (char c : text) out.push_back(index_of(c));
    return out;
}

std::string Alphabet::decode(const std::vector<int>& indices) const {
    std::string out;
    out.reserve(indices.size());
    for (int i : indices) out.push_back(symbol(i));
    return out;
}

Alphabet default_alphabet() {
    Alphabet a;
    a.symbols = "abcdefghijklmnopqrstuvwxyz0123456789 .,:;!?'-";
    std::set<char> uniq(a.symbols.begin(), a.symbols.end());
    if (uniq.size() != a.symbols.size())
        throw std::logic_error("alphabet: duplicate symbols");
    return a;
}

int levenshtein(const std::string& a, const std::string& b) {
    const std::size_t n = a.size(), m = b.size();
    std::vector<int> prev(m + 1), cur(m + 1);
    for (std::size_t j = 0; j <= m; ++j) prev[j] = static_cast<int>(j);
    for (std::size_t i = 1; i <= n; ++i) {
        cur[0] = static_cast<int>(i);
        for (std::size_t j = 1; j <= m; ++j) {
            int sub = prev[j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1);
            cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, sub});
        }
        std::swap(prev, cur);
    }
    return prev[m];
}

double cer(const std::vector<std::string>& hyps, const std::vector<std::string>& refs) {
    if (hyps.size() != refs.size())
        throw std::invalid_argument("cer: hypothesis and reference counts differ");
    std::size_t total = 0;
    long long edits = 0;
    for (std::size_t i = 0; i < refs.size(); ++i) {
        total += refs[i].size();
        edits += levenshtein(hyps[i], refs[i]);
    }
    if (total == 0) throw std::invalid_argument("cer: empty reference corpus");
    return 100.0 * static_cast<double>(edits) / static_cast<double>(total);
}

}  // namespace docdpm
