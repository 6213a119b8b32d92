#include "pagent/prompts.hpp"

namespace pagent::prompts {

std::string substitute(std::string text, const std::string& placeholder,
                       const std::string& value) {
    std::size_t pos = 0;
    while ((pos = text.find(placeholder, pos)) != std::string::npos) {
        text.replace(pos, placeholder.size(), value);
        pos += value.size();
    }
    return text;
}

} // namespace pagent::prompts
