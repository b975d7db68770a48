#include <stdio.h>
#include <string.h>

#include "authex.h"

static int fail(const char *what) {
    char msg[128];
    authex_last_error(msg, sizeof msg);
    printf("%s failed: %s\n", what, msg);
    return 1;
}

int main(void) {
    uint8_t digest[AUTHEX_HASH_LEN];
    if (authex_sha256((const uint8_t *)"abc", 3, digest) != AUTHEX_STATUS_OK || digest[0] != 0xba || digest[31] != 0xad)
        return fail("sha256");

    uint8_t key[AUTHEX_KEY_LEN];
    memset(key, 0x11, sizeof key);
    const char *msg = "hello";
    uint8_t ct[5], pt[5], tag[AUTHEX_TAG_LEN];
    if (authex_seal(key, 0, 1, (const uint8_t *)msg, 5, NULL, 0, ct, tag) != AUTHEX_STATUS_OK)
        return fail("seal");
    if (authex_open(key, 0, 1, ct, 5, tag, NULL, 0, pt) != AUTHEX_STATUS_OK || memcmp(pt, msg, 5) != 0)
        return fail("open");
    tag[3] ^= 0x80;
    if (authex_open(key, 0, 1, ct, 5, tag, NULL, 0, pt) != AUTHEX_STATUS_AUTH_FAILURE)
        return fail("tamper check");

    AuthexNode *node = NULL;
    const char *cfg =
        "node_id = \"c\"\naddress = \"127.0.0.1:1\"\nflavor = \"trustzone\"\n"
        "root_key = \"0102030405060708090a0b0c0d0e0f10\"\n";
    if (authex_node_new(cfg, &node) != AUTHEX_STATUS_OK)
        return fail("node_new");
    uint8_t frame[] = {0xEE, 0x00, 0x00};
    AuthexBuffer reply = {0};
    if (authex_node_handle_frame(node, frame, sizeof frame, &reply) != AUTHEX_STATUS_MALFORMED_FRAME)
        return fail("malformed frame");
    authex_buffer_free(&reply);
    authex_node_free(node);
    printf("smoke ok %s\n", authex_version());
    return 0;
}
